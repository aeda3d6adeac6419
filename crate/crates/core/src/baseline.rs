//! Fully connected rectifier network used as the conventional comparison.
//! It sees pixel intensities directly: clean images in training, blended or
//! noisy ones in evaluation.

use crate::rng;
use crate::trainer::{adam_step, AdamConfig, AdamState, Metrics, TrainError};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// `hidden × input`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `classes × hidden`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

fn uniform(rows: usize, cols: usize, r: &mut impl Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-a..=a))
}

impl Mlp {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0xb45e]);
        Self {
            w1: uniform(n_hidden, n_in, &mut r),
            b1: Array1::zeros(n_hidden),
            w2: uniform(n_out, n_hidden, &mut r),
            b2: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w1.ncols()
    }

    fn hidden(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (x.dot(&self.w1.t()) + &self.b1).mapv(|v| v.max(0.0))
    }

    /// Class scores for a batch of rows.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.hidden(x).dot(&self.w2.t()) + &self.b2
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check(images: &Array2<f64>, labels: &[usize], n_in: usize, n_out: usize) -> Result<(), TrainError> {
    if images.nrows() == 0 {
        return Err(TrainError::EmptyDataset);
    }
    if images.nrows() != labels.len() || images.ncols() != n_in {
        return Err(TrainError::Shape(format!(
            "{:?} images for {} labels and {n_in} inputs",
            images.dim(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n_out) {
        return Err(TrainError::Label { label, n_classes: n_out });
    }
    Ok(())
}

/// Adam-trained softmax cross-entropy classifier.
#[derive(Debug, Clone)]
pub struct MlpTrainer {
    pub net: Mlp,
    cfg: AdamConfig,
    states: [AdamState; 4],
}

impl MlpTrainer {
    pub fn new(net: Mlp, cfg: AdamConfig) -> Self {
        let states = [
            AdamState::new(net.w1.len()),
            AdamState::new(net.b1.len()),
            AdamState::new(net.w2.len()),
            AdamState::new(net.b2.len()),
        ];
        Self { net, cfg, states }
    }

    /// One shuffled pass; returns the pre-update accuracy and mean loss.
    pub fn train_epoch(
        &mut self,
        images: &Array2<f64>,
        labels: &[usize],
        batch_size: usize,
        seed: u64,
    ) -> Result<Metrics, TrainError> {
        check(images, labels, self.net.n_in(), self.net.b2.len())?;
        if batch_size == 0 {
            return Err(TrainError::BatchSize);
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng::stream(seed, &[0xb45e, 1]));
        let (mut n_correct, mut loss_sum) = (0usize, 0.0);
        for batch in order.chunks(batch_size) {
            let x = images.select(Axis(0), batch);
            let h = self.net.hidden(x.view());
            let mut p = h.dot(&self.net.w2.t()) + &self.net.b2;
            softmax_rows(&mut p);
            for (row, &i) in p.rows().into_iter().zip(batch) {
                n_correct += usize::from(argmax_row(row) == labels[i]);
                loss_sum -= row[labels[i]].max(1e-300).ln();
            }
            // dL/dz = (p - y) / B
            let mut dz = p;
            for (mut row, &i) in dz.rows_mut().into_iter().zip(batch) {
                row[labels[i]] -= 1.0;
            }
            dz /= batch.len() as f64;
            let dw2 = dz.t().dot(&h);
            let db2 = dz.sum_axis(Axis(0));
            let mut dh = dz.dot(&self.net.w2);
            dh.zip_mut_with(&h, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            let dw1 = dh.t().dot(&x);
            let db1 = dh.sum_axis(Axis(0));
            let [s1, s2, s3, s4] = &mut self.states;
            adam_step(self.net.w1.as_slice_mut().unwrap(), dw1.as_slice().unwrap(), s1, &self.cfg)?;
            adam_step(self.net.b1.as_slice_mut().unwrap(), db1.as_slice().unwrap(), s2, &self.cfg)?;
            adam_step(self.net.w2.as_slice_mut().unwrap(), dw2.as_slice().unwrap(), s3, &self.cfg)?;
            adam_step(self.net.b2.as_slice_mut().unwrap(), db2.as_slice().unwrap(), s4, &self.cfg)?;
        }
        if !loss_sum.is_finite() {
            return Err(TrainError::NonFinite("baseline loss"));
        }
        Ok(Metrics {
            accuracy: n_correct as f64 / labels.len() as f64,
            n_correct,
            n_total: labels.len(),
            loss_mean: loss_sum / labels.len() as f64,
        })
    }
}

/// Accuracy and mean cross-entropy over a set of images.
pub fn evaluate(net: &Mlp, images: &Array2<f64>, labels: &[usize]) -> Result<Metrics, TrainError> {
    check(images, labels, net.n_in(), net.b2.len())?;
    let (mut n_correct, mut loss_sum) = (0usize, 0.0);
    for start in (0..labels.len()).step_by(1024) {
        let end = (start + 1024).min(labels.len());
        let mut p = net.logits(images.slice(s![start..end, ..]));
        softmax_rows(&mut p);
        for (row, &label) in p.rows().into_iter().zip(&labels[start..end]) {
            n_correct += usize::from(argmax_row(row) == label);
            loss_sum -= row[label].max(1e-300).ln();
        }
    }
    Ok(Metrics {
        accuracy: n_correct as f64 / labels.len() as f64,
        n_correct,
        n_total: labels.len(),
        loss_mean: loss_sum / labels.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut r = rng::stream(seed, &[]);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((n, 6), |(i, j)| {
            let centre = if j % 3 == labels[i] { 0.8 } else { 0.1 };
            centre + r.random_range(-0.1..0.1)
        });
        (x, labels)
    }

    #[test]
    fn learns_separable_blobs() {
        let (x, y) = blobs(300, 1);
        let mut t = MlpTrainer::new(
            Mlp::new(6, 16, 3, 0),
            AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        );
        let first = t.train_epoch(&x, &y, 16, 0).unwrap();
        for e in 1..20 {
            t.train_epoch(&x, &y, 16, e).unwrap();
        }
        let m = evaluate(&t.net, &x, &y).unwrap();
        assert!(m.loss_mean < first.loss_mean);
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let (x, y) = blobs(5, 2);
        let net = Mlp::new(6, 4, 3, 3);
        let loss = |net: &Mlp| evaluate(net, &x, &y).unwrap().loss_mean;
        let mut t = MlpTrainer::new(net.clone(), AdamConfig::default());
        let before = t.net.clone();
        t.train_epoch(&x, &y, 5, 0).unwrap();
        let moved = &t.net.w2 - &before.w2;
        let h = 1e-6;
        let mut probe = net.clone();
        let mut fd = Array2::zeros(net.w2.dim());
        for idx in ndarray::indices(net.w2.dim()) {
            probe.w2[idx] += h;
            let up = loss(&probe);
            probe.w2[idx] -= 2.0 * h;
            let down = loss(&probe);
            probe.w2[idx] += h;
            fd[idx] = (up - down) / (2.0 * h);
        }
        // The first Adam step is -lr·sign(g) wherever g is not tiny.
        for (m, g) in moved.iter().zip(&fd) {
            if g.abs() > 1e-4 {
                assert_abs_diff_eq!(*m, -1e-3 * g.signum(), epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn shape_and_label_errors() {
        let net = Mlp::new(6, 4, 3, 0);
        let (x, _) = blobs(4, 0);
        assert!(matches!(evaluate(&net, &x, &[0, 1, 2]), Err(TrainError::Shape(_))));
        assert!(matches!(
            evaluate(&net, &x, &[0, 1, 2, 7]),
            Err(TrainError::Label { label: 7, .. })
        ));
        assert_eq!(evaluate(&net, &Array2::zeros((0, 6)), &[]), Err(TrainError::EmptyDataset));
    }
}
