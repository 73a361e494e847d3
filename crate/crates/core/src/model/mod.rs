//! Network assembly from a declarative config, whole-graph forward and
//! backward passes, parameter audit, persistence and feature dumps.

mod audit;
mod config;
mod features;
mod io;
mod network;

pub use audit::{
    compare_with_table, group_thousands, is_canonical, param_audit, render_audit, LayerCount, ParamAudit,
    TableDelta, TableRow, TABLE_I,
};
pub use config::{LayerKind, LayerSpec, MapShape, ModelConfig, CANONICAL_CONFIG, DESK_CONFIG, EXFEAT_KERNELS};
pub use features::{dump_feature_maps, write_feature_maps};
pub use io::{load_model, load_model_file, save_model, save_model_file, MODEL_MAGIC, MODEL_VERSION};
pub use network::{FeatureCapture, ForwardCache, Network};

use crate::error::Result;
use crate::nn::gradcheck::{gradcheck, Coords, GradcheckOptions, GradcheckReport};
use crate::nn::softmax_xent_batch;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Finite-difference check of the full backward pass: one random input and
/// label, `coords` sampled parameter coordinates, 64-bit arithmetic.
pub fn gradcheck_network(config: &ModelConfig, seed: u64, coords: usize, eps: f64) -> Result<GradcheckReport> {
    let mut rng = SeededRng::new(seed);
    let net = Network::<f64>::build(config.clone(), &mut rng)?;
    let [c, h, w] = config.input;
    let x = Tensor::<f64>::rand_uniform(&[1, c, h, w], 0.0, 1.0, &mut rng)?;
    let label = [rng.below(config.num_classes())];

    let cache = net.forward_cached(&x)?;
    let loss = softmax_xent_batch(cache.logits(), &label)?;
    let analytic = net.backward(&cache, &loss.grad)?;

    let names = net.param_names();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let params: Vec<Tensor<f64>> = net.params().into_iter().cloned().collect();
    let opts = GradcheckOptions {
        eps,
        coords: Coords::Sample {
            count: coords,
            seed: rng.next_u64(),
        },
        kink_guard: true,
    };
    let mut report = gradcheck(&name_refs, &params, &analytic, opts, |p| {
        let mut probe = net.clone();
        probe.set_params(p.to_vec())?;
        let (logits, _) = probe.forward(&x, &[])?;
        Ok(softmax_xent_batch(&logits, &label)?.mean)
    })?;
    report.op = "network".to_string();
    report.inputs.retain(|c| c.checked > 0);
    Ok(report)
}
