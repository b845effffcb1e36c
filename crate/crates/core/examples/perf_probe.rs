use emu_core::phantom::{self, AntennaPlacement};
use emu_core::solver::{self, PmlConfig};
use emu_core::surrogate::{self, unet::UNetShape};
use std::time::Instant;

fn main() {
    println!("simd level: {:?}", surrogate::kernels::simd_level());
    micro_kernels();
    stage_breakdown();

    // Surrogate forward at 158x133 (padded 160x144), base-16 4-stage.
    let g = phantom::generate_phantom(1, 158, 133, 1.5e-3).unwrap();
    let ring = phantom::antenna_ring(&g, 16).unwrap();
    let model = surrogate::SurrogateModel::init(
        UNetShape { stages: 4, base_width: 16 },
        4e8,
        100.0,
        7,
    )
    .unwrap();
    let enc = surrogate::encode_input(&g, &ring[0]).unwrap();
    let _warm = surrogate::forward(&model, &enc);
    let reps = 20;
    let t0 = Instant::now();
    for _ in 0..reps {
        let out = surrogate::forward(&model, &enc);
        std::hint::black_box(out);
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;
    println!("forward 158x133: {:.1} ms", fwd * 1e3);

    // Training step cost at 64x64 (8-sample batch, fwd+bwd).
    let g64 = phantom::generate_phantom(1, 64, 64, 3e-3).unwrap();
    let ring64 = phantom::antenna_ring(&g64, 8).unwrap();
    let table = phantom::default_material_table(4e8).unwrap();
    let pml8 = PmlConfig { thickness: 8, ..PmlConfig::default() };
    let t0 = Instant::now();
    let (field, stats) =
        solver::compute_field(&g64, &table, 4e8, &ring64[0], &pml8, 1e-8).unwrap();
    println!(
        "solve 64x64: {:.0} ms, {} iters, res {:.2e}",
        t0.elapsed().as_secs_f64() * 1e3,
        stats.iterations,
        stats.final_residual
    );
    let enc64 = surrogate::encode_input(&g64, &ring64[0]).unwrap();
    let _w = surrogate::backward(&model, &enc64, &field).unwrap();
    let t0 = Instant::now();
    for _ in 0..8 {
        let gr = surrogate::backward(&model, &enc64, &field).unwrap();
        std::hint::black_box(gr);
    }
    let bwd = t0.elapsed().as_secs_f64() / 8.0;
    println!(
        "fwd+bwd 64x64 per sample: {:.1} ms -> est. epoch(128 samples) {:.1} s, 200 epochs {:.0} min",
        bwd * 1e3,
        bwd * 128.0,
        bwd * 128.0 * 200.0 / 60.0
    );

    // Solver at bench scale 158x133 on the head phantom.
    let table4 = phantom::default_material_table(4e8).unwrap();
    let pml = PmlConfig::default();
    let t0 = Instant::now();
    let (_f, st) = solver::compute_field(&g, &table4, 4e8, &ring[0], &pml, 1e-8).unwrap();
    println!(
        "solve head 158x133 @400MHz: {:.2} s, {} iters",
        t0.elapsed().as_secs_f64(),
        st.iterations
    );
    let t15 = phantom::default_material_table(1.5e9).unwrap();
    let t0 = Instant::now();
    let (_f, st) = solver::compute_field(&g, &t15, 1.5e9, &ring[0], &pml, 1e-8).unwrap();
    println!(
        "solve head 158x133 @1.5GHz: {:.2} s, {} iters",
        t0.elapsed().as_secs_f64(),
        st.iterations
    );
    // Refined x2 at 900 MHz.
    let t9 = phantom::default_material_table(9e8).unwrap();
    let t0 = Instant::now();
    let (_f, st) =
        solver::compute_field_refined(&g, &t9, 9e8, &ring[0], &pml, 1e-8, 2).unwrap();
    println!(
        "solve head 316x266 (x2 refined) @900MHz: {:.2} s, {} iters",
        t0.elapsed().as_secs_f64(),
        st.iterations
    );
    let t0 = Instant::now();
    let (_f, st) =
        solver::compute_field_refined(&g, &t15, 1.5e9, &ring[0], &pml, 1e-8, 3).unwrap();
    println!(
        "solve head 474x399 (x3 refined) @1.5GHz: {:.2} s, {} iters",
        t0.elapsed().as_secs_f64(),
        st.iterations
    );
    let _ = AntennaPlacement::unit(0, 0);
}

fn stage_breakdown() {
    use emu_core::surrogate::kernels as k;
    use emu_core::surrogate::tensor::Tensor;
    // replicate the 4-stage base-16 forward at padded 160x144 with timings
    let widths = [16usize, 32, 64, 128];
    let (ph, pw) = (144usize, 160usize);
    let input = Tensor::from_vec(1, ph, pw, (0..ph*pw).map(|i| (i % 23) as f32 * 0.05).collect());
    let mk_w = |n: usize| (0..n).map(|i| ((i % 19) as f32 - 9.0) * 0.01).collect::<Vec<f32>>();
    let reps = 10;
    let mut total = 0.0;
    let mut timer = |label: &str, f: &mut dyn FnMut()| -> f64 {
        f();
        let t0 = Instant::now();
        for _ in 0..reps { f(); }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        println!("  {label}: {:.2} ms", dt*1e3);
        dt
    };
    let mut cur = input.clone();
    let mut skips: Vec<Tensor> = vec![];
    for (s_idx, &c) in widths.iter().enumerate() {
        let (h, w) = (cur.h, cur.w);
        let cin = cur.ch;
        let wa = mk_w(c*cin*9); let ba = vec![0.01f32; c];
        let wb = mk_w(c*c*9);
        let mut a = Tensor::zeros(c, h, w);
        total += timer(&format!("enc{s_idx} conv_a {cin}->{c} @{h}x{w}"), &mut || {
            k::conv3x3_forward(&cur, &wa, &ba, &mut a, true);
            k::relu_forward(&mut a);
        });
        let mut btn = Tensor::zeros(c, h, w);
        total += timer(&format!("enc{s_idx} conv_b {c}->{c}"), &mut || {
            k::conv3x3_forward(&a, &wb, &ba, &mut btn, true);
            k::relu_forward(&mut btn);
        });
        skips.push(btn.clone());
        if s_idx + 1 < widths.len() {
            let mut pooled = Tensor::zeros(c, h/2, w/2);
            let mut amax = vec![0u32; c*h*w/4];
            total += timer(&format!("pool{s_idx}"), &mut || {
                k::maxpool2_forward(&btn, &mut pooled, &mut amax);
            });
            cur = pooled;
        } else { cur = btn.clone(); }
    }
    for run in 0..3usize {
        let s_idx = 2 - run;
        let c = widths[s_idx];
        let cd = widths[s_idx+1];
        let (h, w) = (cur.h*2, cur.w*2);
        let wt = mk_w(cd*c*4); let bt = vec![0.0f32; c];
        let mut up = Tensor::zeros(c, h, w);
        total += timer(&format!("dec{s_idx} up {cd}->{c} @{h}x{w}"), &mut || {
            k::tconv2_forward(&cur, &wt, &bt, &mut up, true);
        });
        let skip = &skips[s_idx];
        let mut cat = Tensor::concat(&up, skip);
        total += timer(&format!("dec{s_idx} concat"), &mut || {
            cat = Tensor::concat(&up, skip);
        });
        let wa = mk_w(c*2*c*9); let ba = vec![0.0f32; c];
        let wb = mk_w(c*c*9);
        let mut a = Tensor::zeros(c, h, w);
        total += timer(&format!("dec{s_idx} conv_a {}->{c}", 2*c), &mut || {
            k::conv3x3_forward(&cat, &wa, &ba, &mut a, true);
            k::relu_forward(&mut a);
        });
        let mut b2 = Tensor::zeros(c, h, w);
        total += timer(&format!("dec{s_idx} conv_b {c}->{c}"), &mut || {
            k::conv3x3_forward(&a, &wb, &ba, &mut b2, true);
            k::relu_forward(&mut b2);
        });
        cur = b2;
    }
    println!("  SUM: {:.1} ms", total*1e3);
}

fn micro_kernels() {
    use emu_core::surrogate::kernels as k;
    use emu_core::surrogate::tensor::Tensor;
    let time = |label: &str, flops: f64, f: &mut dyn FnMut()| {
        f(); // warm
        let n = 30;
        let t0 = Instant::now();
        for _ in 0..n { f(); }
        let dt = t0.elapsed().as_secs_f64() / n as f64;
        println!("{label}: {:.2} ms  ({:.1} GFlops)", dt * 1e3, flops / dt / 1e9);
    };
    let input = Tensor::from_vec(16, 160, 144, (0..16*160*144).map(|i| (i % 17) as f32 * 0.1).collect());
    let w: Vec<f32> = (0..16*16*9).map(|i| (i % 13) as f32 * 0.01).collect();
    let b = vec![0.1f32; 16];
    let mut out = Tensor::zeros(16, 160, 144);
    time("conv3x3 16->16 @160x144 seq", 2.0*16.0*16.0*9.0*160.0*144.0, &mut || {
        k::conv3x3_forward(&input, &w, &b, &mut out, false);
    });
    time("conv3x3 16->16 @160x144 par", 2.0*16.0*16.0*9.0*160.0*144.0, &mut || {
        k::conv3x3_forward(&input, &w, &b, &mut out, true);
    });
    let mut dinput = Tensor::zeros(16, 160, 144);
    let mut dw = vec![0f32; 16*16*9];
    let mut db = vec![0f32; 16];
    time("conv3x3 bwd 16->16 @160x144 seq", 4.0*16.0*16.0*9.0*160.0*144.0, &mut || {
        k::conv3x3_backward(&input, &w, &out, &mut dinput, &mut dw, &mut db, false);
    });
    let deep = Tensor::from_vec(32, 80, 72, (0..32*80*72).map(|i| (i % 11) as f32 * 0.1).collect());
    let wt: Vec<f32> = (0..32*16*4).map(|i| (i % 7) as f32 * 0.02).collect();
    let bt = vec![0f32; 16];
    let mut tout = Tensor::zeros(16, 160, 144);
    time("tconv 32->16 @80x72 seq", 2.0*32.0*16.0*4.0*80.0*72.0, &mut || {
        k::tconv2_forward(&deep, &wt, &bt, &mut tout, false);
    });
    let mut dt_in = Tensor::zeros(32, 80, 72);
    let mut dwt = vec![0f32; 32*16*4];
    let mut dbt = vec![0f32; 16];
    time("tconv bwd 32->16 seq", 4.0*32.0*16.0*4.0*80.0*72.0, &mut || {
        k::tconv2_backward(&deep, &wt, &tout, &mut dt_in, &mut dwt, &mut dbt, false);
    });
    let wh: Vec<f32> = (0..2*16).map(|i| i as f32 * 0.01).collect();
    let bh = vec![0f32; 2];
    let mut hout = Tensor::zeros(2, 160, 144);
    time("conv1x1 16->2 seq", 2.0*16.0*2.0*160.0*144.0, &mut || {
        k::conv1x1_forward(&input, &wh, &bh, &mut hout, false);
    });
    let mut pooled = Tensor::zeros(16, 80, 72);
    let mut amax = vec![0u32; 16*80*72];
    time("maxpool @160x144", 16.0*160.0*144.0, &mut || {
        k::maxpool2_forward(&input, &mut pooled, &mut amax);
    });
}
