use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::engine::{backward, forward};
use super::{argmax, cross_entropy, LabeledDataset, NetError, Network, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 64,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Mini-batch SGD on softmax cross-entropy.
///
/// The sample order of every epoch is a seeded shuffle, so the result is a
/// pure function of the inputs.
pub fn train_sgd(
    mut net: Network,
    data: &LabeledDataset,
    test: Option<&LabeledDataset>,
    cfg: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(NetError::Dataset("training set is empty".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(NetError::TrainConfig(format!(
            "epochs, batch size and learning rate must be positive (got {}, {}, {})",
            cfg.epochs, cfg.batch_size, cfg.learning_rate
        )));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(NetError::TrainConfig(format!("momentum {} outside [0, 1)", cfg.momentum)));
    }
    check_compatible(&net, data)?;
    if let Some(t) = test {
        check_compatible(&net, t)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let n_in = net.input_len();
    let m = net.num_classes();
    let zero_grads = |net: &Network| -> Vec<Vec<Vec<f64>>> {
        net.layers()
            .iter()
            .map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect())
            .collect()
    };
    let mut velocity = zero_grads(&net);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = chunk.len();
            let mut xs = Vec::with_capacity(b * n_in);
            for &i in chunk {
                xs.extend_from_slice(data.image(i).data());
            }
            let mut grads = zero_grads(&net);
            let mut seeds = vec![0.0; b * m];
            let mut batch_loss = 0.0;
            {
                let trace = forward(&net, &xs, b, true);
                for (row, &i) in chunk.iter().enumerate() {
                    let (loss, g) = cross_entropy(trace.logits_of(row), data.label(i));
                    batch_loss += loss;
                    for (s, v) in seeds[row * m..(row + 1) * m].iter_mut().zip(g) {
                        *s = v / b as f64;
                    }
                }
                if !batch_loss.is_finite() {
                    return Err(NetError::NonFiniteLoss {
                        epoch,
                        batch: batch_index,
                    });
                }
                backward(&trace, &seeds, b, Some(&mut grads), false);
            }
            total += batch_loss;
            for ((layer, lv), lg) in net.layers_mut().iter_mut().zip(&mut velocity).zip(&grads) {
                for ((param, v), g) in layer.params_mut().into_iter().zip(lv).zip(lg) {
                    for ((p, vi), gi) in param.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                        *vi = cfg.momentum * *vi + gi;
                        *p -= cfg.learning_rate * *vi;
                    }
                }
            }
        }
        let mean = total / data.len() as f64;
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        epoch_losses.push(mean);
    }

    let train_accuracy = accuracy(&net, data)?;
    let test_accuracy = test.map(|t| accuracy(&net, t)).transpose()?;
    Ok((
        net,
        TrainReport {
            epoch_losses,
            train_accuracy,
            test_accuracy,
        },
    ))
}

/// Fraction of samples whose prediction equals the label.
pub fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(NetError::Dataset("cannot score an empty dataset".into()));
    }
    check_compatible(net, data)?;
    let n_in = net.input_len();
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(256) {
        let mut xs = Vec::with_capacity(chunk.len() * n_in);
        for &i in chunk {
            xs.extend_from_slice(data.image(i).data());
        }
        let trace = forward(net, &xs, chunk.len(), false);
        for (row, &i) in chunk.iter().enumerate() {
            if argmax(trace.logits_of(row)) == data.label(i) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

fn check_compatible(net: &Network, data: &LabeledDataset) -> Result<()> {
    if let Some(shape) = data.sample_shape() {
        if shape != net.input_shape() {
            return Err(NetError::InputShape {
                expected: net.input_shape().to_vec(),
                actual: shape.to_vec(),
            });
        }
    }
    if data.num_classes() != net.num_classes() {
        return Err(NetError::Dataset(format!(
            "dataset has {} classes, network has {}",
            data.num_classes(),
            net.num_classes()
        )));
    }
    Ok(())
}
