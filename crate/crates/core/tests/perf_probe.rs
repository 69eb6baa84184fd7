//! Rough throughput probe for the conv stack; run manually with
//! `cargo test --release -p relicseg-core --test perf_probe -- --ignored --nocapture`

use relicseg_core::nn::conv::Conv2dCfg;
use relicseg_core::nn::gradcheck::rand_array;
use relicseg_core::nn::Graph;
use std::time::Instant;

#[test]
#[ignore]
fn conv_throughput() {
    // representative of the heaviest layers at desk scale (batch 2)
    let cases = [
        // (b, cin, h, w, cout, k, stride, pad, dil, label)
        (2usize, 96usize, 64usize, 64usize, 48usize, 3usize, 1usize, 1usize, 1usize, "hfe fusion"),
        (2, 64, 32, 32, 64, 3, 1, 1, 1, "stage1 unit"),
        (2, 160, 16, 16, 128, 3, 1, 2, 2, "aspp branch"),
    ];
    for (b, cin, h, w, cout, k, s, p, d, label) in cases {
        let x = rand_array::<f32>(&[b, cin, h, w], 1);
        let wt = rand_array::<f32>(&[cout, cin, k, k], 2);
        let cfg = Conv2dCfg { stride: s, pad: p, dilation: d };
        let (oh, ow) = (cfg.out_dim(h, k), cfg.out_dim(w, k));
        let flops_fwd = 2.0 * (b * cout * oh * ow * cin * k * k) as f64;

        let t0 = Instant::now();
        let reps = 20;
        for _ in 0..reps {
            let mut g: Graph<f32> = Graph::new(true);
            let xid = g.leaf(x.clone(), true);
            let wid = g.leaf(wt.clone(), true);
            let y = g.conv2d(xid, wid, None, cfg);
            let loss = g.sum_all(y);
            let _ = g.backward(loss);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        // fwd + dX + dW gemms ~ 3x forward flops
        println!(
            "{label}: {:.2} ms/iter eff {:.1} GF/s (fwd+bwd)",
            dt * 1e3,
            3.0 * flops_fwd / dt / 1e9
        );
    }
}
