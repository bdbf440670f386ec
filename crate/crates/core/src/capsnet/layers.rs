//! Building blocks: dense layers, EdgeConv, squash and agreement routing.

/// Affine map `y = W x + b`, `W` stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            *slot = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs];
        self.apply_into(x, &mut out);
        out
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major `rows x dim` feature matrix, one row per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// `k` nearest other rows of every row, ordered by (squared distance, index).
/// Caller guarantees `rows > k`.
pub fn feature_knn(f: &Features, k: usize) -> Vec<Vec<usize>> {
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(f.rows);
    (0..f.rows)
        .map(|i| {
            scratch.clear();
            let ri = f.row(i);
            scratch.extend(
                (0..f.rows)
                    .filter(|&j| j != i)
                    .map(|j| (sq_dist(ri, f.row(j)), j)),
            );
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if scratch.len() > k {
                scratch.select_nth_unstable_by(k - 1, cmp);
                scratch.truncate(k);
            }
            scratch.sort_by(cmp);
            scratch.iter().map(|&(_, j)| j).collect()
        })
        .collect()
}

/// One EdgeConv layer: for each row `i`, the max over its neighbors `j` of
/// `leaky(W [x_i, x_j - x_i] + b)`.
pub fn edge_conv(f: &Features, neighbors: &[Vec<usize>], layer: &Dense, slope: f64) -> Features {
    debug_assert_eq!(layer.inputs, 2 * f.dim);
    let mut out = Features::new(f.rows, layer.outputs);
    let mut edge = vec![0.0; 2 * f.dim];
    let mut act = vec![0.0; layer.outputs];
    for i in 0..f.rows {
        let xi = f.row(i);
        let dst = out.row_mut(i);
        dst.fill(f64::NEG_INFINITY);
        for &j in &neighbors[i] {
            let xj = f.row(j);
            for c in 0..f.dim {
                edge[c] = xi[c];
                edge[f.dim + c] = xj[c] - xi[c];
            }
            layer.apply_into(&edge, &mut act);
            for (d, a) in dst.iter_mut().zip(&act) {
                *d = d.max(leaky_relu(*a, slope));
            }
        }
    }
    out
}

/// `(|s|^2 / (1 + |s|^2)) * s / |s|`, zero at zero.
pub fn squash(s: &[f64]) -> Vec<f64> {
    let n2: f64 = s.iter().map(|x| x * x).sum();
    if n2 == 0.0 {
        return vec![0.0; s.len()];
    }
    let scale = n2 / (1.0 + n2) / n2.sqrt();
    s.iter().map(|x| x * scale).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Transformation matrices of the routing layer: one `out_dim x in_dim`
/// matrix per (input capsule, output capsule) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteWeights {
    pub inputs: usize,
    pub outputs: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
}

impl RouteWeights {
    pub fn zeros(inputs: usize, outputs: usize, in_dim: usize, out_dim: usize) -> Self {
        Self {
            inputs,
            outputs,
            in_dim,
            out_dim,
            w: vec![0.0; inputs * outputs * in_dim * out_dim],
        }
    }

    /// Prediction `u_hat[j|i] = W_ij u_i`.
    pub fn predict(&self, i: usize, j: usize, u: &[f64]) -> Vec<f64> {
        let base = (i * self.outputs + j) * self.out_dim * self.in_dim;
        (0..self.out_dim)
            .map(|r| {
                let row = &self.w[base + r * self.in_dim..base + (r + 1) * self.in_dim];
                row.iter().zip(u).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    /// Squashed output capsules.
    pub outputs: Vec<Vec<f64>>,
    /// Final coupling logits, `inputs x outputs`.
    pub logits: Vec<Vec<f64>>,
}

/// Routing by agreement. Logits start at zero; each iteration takes a
/// softmax over outputs, forms the weighted sum of predictions, squashes it
/// and, except after the last iteration, adds `u_hat . v` to the logits.
pub fn route(primary: &[Vec<f64>], weights: &RouteWeights, iterations: usize) -> Routing {
    let n_in = primary.len();
    let n_out = weights.outputs;
    let predictions: Vec<Vec<Vec<f64>>> = (0..n_in)
        .map(|i| (0..n_out).map(|j| weights.predict(i, j, &primary[i])).collect())
        .collect();
    let mut logits = vec![vec![0.0; n_out]; n_in];
    let mut outputs = vec![vec![0.0; weights.out_dim]; n_out];
    for it in 0..iterations.max(1) {
        let couplings: Vec<Vec<f64>> = logits.iter().map(|b| softmax(b)).collect();
        for (j, out) in outputs.iter_mut().enumerate() {
            let mut s = vec![0.0; weights.out_dim];
            for i in 0..n_in {
                let c = couplings[i][j];
                for (acc, u) in s.iter_mut().zip(&predictions[i][j]) {
                    *acc += c * u;
                }
            }
            *out = squash(&s);
        }
        if it + 1 < iterations {
            for i in 0..n_in {
                for j in 0..n_out {
                    let agree: f64 = predictions[i][j].iter().zip(&outputs[j]).map(|(a, b)| a * b).sum();
                    logits[i][j] += agree;
                }
            }
        }
    }
    Routing { outputs, logits }
}

fn softmax(b: &[f64]) -> Vec<f64> {
    let m = b.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = b.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squash_closed_form() {
        assert_eq!(squash(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        assert!((norm(&squash(&[0.6, 0.8])) - 0.5).abs() < 1e-12);
        assert!((norm(&squash(&[1e3, 0.0])) - 1.0).abs() < 1e-5);
        let v = squash(&[3.0, -4.0]);
        assert!((v[0] / v[1] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn dense_applies_row_major() {
        let d = Dense {
            inputs: 2,
            outputs: 2,
            w: vec![1.0, 2.0, 3.0, 4.0],
            b: vec![0.5, -0.5],
        };
        assert_eq!(d.apply(&[1.0, 1.0]), vec![3.5, 6.5]);
    }

    #[test]
    fn single_iteration_is_uniform_sum() {
        let mut w = RouteWeights::zeros(3, 2, 2, 2);
        for (i, x) in w.w.iter_mut().enumerate() {
            *x = ((i * 7) % 5) as f64 * 0.1 - 0.2;
        }
        let primary = vec![vec![0.3, -0.1], vec![0.2, 0.4], vec![-0.5, 0.1]];
        let r = route(&primary, &w, 1);
        for j in 0..2 {
            let mut s = [0.0; 2];
            for (i, u) in primary.iter().enumerate() {
                let p = w.predict(i, j, u);
                s[0] += p[0] / 2.0;
                s[1] += p[1] / 2.0;
            }
            assert_eq!(r.outputs[j], squash(&s));
        }
        assert!(r.logits.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn knn_orders_by_distance_then_index() {
        let f = Features {
            rows: 4,
            dim: 1,
            data: vec![0.0, 1.0, -1.0, 3.0],
        };
        let g = feature_knn(&f, 2);
        assert_eq!(g[0], vec![1, 2]);
        assert_eq!(g[3], vec![1, 0]);
    }
}
