use crate::engine::{Network, NetworkBuilder, Real};
use crate::error::{Error, Result};

pub const AGGREGATOR_HIDDEN_LAYERS: usize = 4;

/// `max(64, 2·K·N)`.
pub fn aggregator_hidden_width(subdomains: usize, classes: usize) -> usize {
    (2 * classes * subdomains).max(64)
}

/// Fully connected net mapping the `K·N` concatenated local probabilities to
/// `K` classes: four ReLU hidden layers, then dense + softmax.
pub fn build_aggregator_dnn<T: Real>(subdomains: usize, classes: usize, seed: u64) -> Result<Network<T>> {
    if subdomains == 0 || classes == 0 {
        return Err(Error::Construction(format!(
            "aggregator needs positive subdomain and class counts, got N={subdomains} K={classes}"
        )));
    }
    let width = aggregator_hidden_width(subdomains, classes);
    let mut b = NetworkBuilder::new(format!("dnn/n{subdomains}/k{classes}"), &[subdomains * classes]);
    for _ in 0..AGGREGATOR_HIDDEN_LAYERS {
        b = b.dense(width)?.relu();
    }
    b.dense(classes)?.softmax().build(classes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Model;

    #[test]
    fn widths_follow_rule() {
        assert_eq!(aggregator_hidden_width(4, 4), 64);
        assert_eq!(aggregator_hidden_width(16, 10), 320);
        let net: Network<f64> = build_aggregator_dnn(4, 10, 0).unwrap();
        assert_eq!(net.input_shape(), &[40]);
        let dense: Vec<_> = net.params().iter().filter(|p| p.name.ends_with("weight")).collect();
        assert_eq!(dense.len(), 5);
        assert_eq!(dense[0].value.shape(), &[80, 40]);
        assert_eq!(dense[4].value.shape(), &[10, 80]);
    }
}
