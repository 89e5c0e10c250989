//! Tensor shapes through the network and parameter counts for the default and
//! tiny configurations.
//!
//! ```text
//! cargo run --release --example model_shapes
//! ```

use fdp::config::RunConfig;
use fdp::model::FdpModel;
use fdp::numerics::{Graph, Mode, Tensor};

fn main() -> fdp::Result<()> {
    for (name, config) in [("default", RunConfig::default()), ("tiny", RunConfig::tiny())] {
        let model = FdpModel::<f32>::new(config.model(5), config.seed)?;
        let (t, s) = (model.frames(), model.input_size());
        println!("{name}: t = {t}, input {s}x{s}, {} trainable parameters", model.params.num_trainable());
        println!("  spatial extent after stem and stages: {:?}", model.config.encoder.spatial_trace()?);

        let mut g = Graph::new(Mode::Eval);
        let frames = g.input(Tensor::zeros(vec![2 * t, 3, s, s]));
        let out = model.forward(&mut g, frames)?;
        for (label, v) in [
            ("frame features", out.features),
            ("rank scores", out.scores),
            ("dynamic representation", out.dynamic),
            ("class probabilities", out.probs),
            ("dynamic image", out.dynamic_image),
        ] {
            println!("  {label:<24} {:?}", g.shape(v));
        }
    }
    Ok(())
}
