//! Reference computations that share no code with the library.

#![allow(dead_code)]

/// Minimizes the mean squared error of `y = a / x + b` by repeated grid
/// refinement. A best point on the box boundary recenters the box without
/// shrinking it, so the search walks toward minima outside the box.
pub fn grid_search_hyperbolic(points: &[(f64, f64)]) -> (f64, f64) {
    const G: i32 = 20;
    let n = points.len() as f64;
    let mse = |a: f64, b: f64| {
        points
            .iter()
            .map(|&(x, y)| {
                let r = a / x + b - y;
                r * r
            })
            .sum::<f64>()
            / n
    };
    let ymax = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    let xmax = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let (mut ca, mut cb) = (0.0, 0.0);
    let (mut ha, mut hb) = (2.0 * ymax * xmax, 2.0 * ymax);
    for _ in 0..2000 {
        let mut best = (f64::INFINITY, 0, 0);
        for i in -G..=G {
            for j in -G..=G {
                let m = mse(ca + ha * i as f64 / G as f64, cb + hb * j as f64 / G as f64);
                if m < best.0 {
                    best = (m, i, j);
                }
            }
        }
        ca += ha * best.1 as f64 / G as f64;
        cb += hb * best.2 as f64 / G as f64;
        if best.1.abs() == G || best.2.abs() == G {
            continue;
        }
        ha *= 0.2;
        hb *= 0.2;
        if ha <= 1e-10 * ca.abs() && hb <= 1e-10 * cb.abs() {
            break;
        }
    }
    (ca, cb)
}

/// MACs of an unpadded square convolution, written out longhand.
pub fn conv_macs_per_kernel(i_size: u64, ifm: u64, ksize: u64, stride: u64) -> f64 {
    let side = ((i_size - ksize) / stride + 1) as f64;
    side * side * ifm as f64 * (ksize * ksize) as f64
}

/// The five-layer LeNet-like network priced by hand on the Xavier NX
/// coefficients: two convolutions `(i_size, ifm, ofm, ksize, stride)` and
/// three FC layers `(i_size, o_size)`.
pub fn lenet_xavier_total() -> f64 {
    let (a_c, b_c, a_f) = (2.8674e-8, 4.7639e-10, 6.2454e-9);
    let convs = [(28u64, 1u64, 6u64, 5u64, 1u64), (12, 6, 16, 5, 1)];
    let fcs = [(400u64, 120u64), (120, 84), (84, 10)];
    let mut total = 0.0;
    for (i, ifm, ofm, k, s) in convs {
        total += conv_macs_per_kernel(i, ifm, k, s) * (a_c + b_c * ofm as f64);
    }
    for (i, o) in fcs {
        total += (i * o) as f64 * a_f;
    }
    total
}

pub const LENET_JSON: &str = r#"{
  "name": "lenet-like",
  "layers": [
    {"kind": "conv2d", "i_size": 28, "ifm": 1, "ofm": 6, "ksize": 5, "stride": 1},
    {"kind": "conv2d", "i_size": 12, "ifm": 6, "ofm": 16, "ksize": 5, "stride": 1},
    {"kind": "fc", "i_size": 400, "o_size": 120},
    {"kind": "fc", "i_size": 120, "o_size": 84},
    {"kind": "fc", "i_size": 84, "o_size": 10}
  ]
}"#;

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}
