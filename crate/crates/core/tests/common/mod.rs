//! Brute-force references shared by the integration and acceptance tests.

#![allow(dead_code)]

use flipfake::{MomModel, RngStream};

/// Random model with every entry bounded away from zero.
pub fn random_model(s: usize, rng: &mut RngStream) -> MomModel {
    let mut row = |n: usize| {
        let v: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform()).collect();
        let t: f64 = v.iter().sum();
        v.into_iter().map(|x| x / t).collect::<Vec<f64>>()
    };
    let p = (0..s).map(|_| row(s)).collect();
    let q = (0..s)
        .map(|_| {
            let a = row(2);
            let b = row(2);
            [[a[0], a[1]], [b[0], b[1]]]
        })
        .collect();
    let flat = row(2 * s);
    let mu = (0..s).map(|x| [flat[2 * x], flat[2 * x + 1]]).collect();
    MomModel::new(p, q, mu).unwrap()
}

pub fn random_bits(n: usize, rng: &mut RngStream) -> Vec<u8> {
    (0..n).map(|_| (rng.uniform() < 0.5) as u8).collect()
}

/// Path sums over every hidden trajectory `x_0..x_N` and latent start flip `y_0`.
pub struct Enumeration {
    /// `P(Y_1..Y_N)`.
    pub z: f64,
    /// `posterior[n][x] = P(X_n = x | Y)` for `n = 0..=N`.
    pub posterior: Vec<Vec<f64>>,
    /// Expected transition counts `x -> x'`.
    pub trans: Vec<Vec<f64>>,
    /// Expected counts of `(X_n = x, Y_{n-1} = y, Y_n = y')`.
    pub emit: Vec<[[f64; 2]; 2]>,
    /// `P(X_0 = x, Y_0 = y | Y)`.
    pub init: Vec<[f64; 2]>,
}

pub fn enumerate(model: &MomModel, y: &[u8]) -> Enumeration {
    let s = model.states();
    let n = y.len();
    let (p, q, mu) = (model.p(), model.q(), model.mu());
    let mut out = Enumeration {
        z: 0.0,
        posterior: vec![vec![0.0; s]; n + 1],
        trans: vec![vec![0.0; s]; s],
        emit: vec![[[0.0; 2]; 2]; s],
        init: vec![[0.0; 2]; s],
    };
    let total_paths = s.pow(n as u32 + 1);
    let mut path = vec![0usize; n + 1];
    for code in 0..total_paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % s;
            c /= s;
        }
        for y0 in 0..2usize {
            let mut w = mu[path[0]][y0];
            let mut prev_y = y0;
            for k in 1..=n {
                let yk = y[k - 1] as usize;
                w *= p[path[k - 1]][path[k]] * q[path[k]][prev_y][yk];
                prev_y = yk;
            }
            out.z += w;
            out.init[path[0]][y0] += w;
            let mut prev_y = y0;
            for k in 0..=n {
                out.posterior[k][path[k]] += w;
                if k >= 1 {
                    let yk = y[k - 1] as usize;
                    out.trans[path[k - 1]][path[k]] += w;
                    out.emit[path[k]][prev_y][yk] += w;
                    prev_y = yk;
                }
            }
        }
    }
    let z = out.z;
    out.posterior.iter_mut().flatten().for_each(|v| *v /= z);
    out.trans.iter_mut().flatten().for_each(|v| *v /= z);
    out.emit.iter_mut().flatten().flatten().for_each(|v| *v /= z);
    out.init.iter_mut().flatten().for_each(|v| *v /= z);
    out
}

/// Exact EM update built from enumerated expected sufficient statistics.
pub fn exact_em(model: &MomModel, y: &[u8]) -> (Vec<Vec<f64>>, Vec<[[f64; 2]; 2]>, Vec<[f64; 2]>) {
    let e = enumerate(model, y);
    let p = e
        .trans
        .iter()
        .map(|row| {
            let t: f64 = row.iter().sum();
            row.iter().map(|v| v / t).collect()
        })
        .collect();
    let q = e
        .emit
        .iter()
        .map(|qx| {
            let mut out = [[0.0; 2]; 2];
            for yy in 0..2 {
                let t = qx[yy][0] + qx[yy][1];
                out[yy] = [qx[yy][0] / t, qx[yy][1] / t];
            }
            out
        })
        .collect();
    let t: f64 = e.init.iter().map(|r| r[0] + r[1]).sum();
    let mu = e.init.iter().map(|r| [r[0] / t, r[1] / t]).collect();
    (p, q, mu)
}

/// Relabel hidden states: new state `i` is old state `perm[i]`.
pub fn permute(model: &MomModel, perm: &[usize]) -> MomModel {
    let (p, q, mu) = (model.p(), model.q(), model.mu());
    let np = perm.iter().map(|&a| perm.iter().map(|&b| p[a][b]).collect()).collect();
    let nq = perm.iter().map(|&a| q[a]).collect();
    let nmu = perm.iter().map(|&a| mu[a]).collect();
    MomModel::new(np, nq, nmu).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}
