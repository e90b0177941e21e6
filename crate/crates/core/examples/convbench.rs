//! Rough throughput probe for the conv stack; used to calibrate campaign
//! budgets. `cargo run --release -p fakebench-core --example convbench`

use std::time::Instant;

use fakebench_core::tensor::{Graph, Tensor};

fn main() {
    let mk = |shape: Vec<usize>, seed: u32| {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape,
            (0..n).map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) >> 8) as f32
                / (1 << 24) as f32)
                - 0.5)
                .collect(),
        )
    };
    let x0 = mk(vec![3, 64, 64], 1);
    let w1 = mk(vec![16, 3, 3, 3], 2);
    let b1 = Tensor::zeros(vec![16]);
    let w2 = mk(vec![32, 16, 3, 3], 3);
    let b2 = Tensor::zeros(vec![32]);
    let w3 = mk(vec![64, 32, 3, 3], 4);
    let b3 = Tensor::zeros(vec![64]);
    let wd = mk(vec![1, 64], 5);
    let bd = Tensor::zeros(vec![1]);

    // ~11.2 MMACs forward; input-grad backward roughly doubles it.
    let flops_fwd = 2.0 * (1.77 + 4.72 + 4.72) * 1e6;

    let iters = 200;
    let start = Instant::now();
    let mut sink = 0.0f32;
    for _ in 0..iters {
        let mut g = Graph::new();
        let x = g.var(&x0);
        let h = g.conv2d(&x, &w1, Some(&b1), 1, 1).unwrap();
        let h = g.leaky_relu(&h, 0.2).unwrap();
        let h = g.avg_pool2(&h, 2).unwrap();
        let h = g.conv2d(&h, &w2, Some(&b2), 1, 1).unwrap();
        let h = g.leaky_relu(&h, 0.2).unwrap();
        let h = g.avg_pool2(&h, 2).unwrap();
        let h = g.conv2d(&h, &w3, Some(&b3), 1, 1).unwrap();
        let h = g.leaky_relu(&h, 0.2).unwrap();
        let h = g.avg_pool2(&h, 2).unwrap();
        let h = g.global_avg_pool(&h).unwrap();
        let y = g.dense(&h, &wd, Some(&bd)).unwrap();
        let s = g.sum(&y).unwrap();
        let grads = g.grad(&s, &[x.node().unwrap()]).unwrap();
        sink += grads[&x.node().unwrap()].data()[0];
    }
    let dt = start.elapsed().as_secs_f64();
    println!(
        "fwd+input-bwd: {:.1} ms/iter, ~{:.2} GFLOP/s single-thread (sink {sink})",
        dt / iters as f64 * 1e3,
        flops_fwd * 2.0 * iters as f64 / dt / 1e9
    );
}
