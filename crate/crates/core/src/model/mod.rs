//! RemNet: a stack of remnant blocks (learned, activation-free
//! preprocessing) in front of a shallow strided-convolution classifier, and
//! the generic [`CascadeModel`] that puts remnant blocks in front of any
//! [`Head`].

mod cascade;
mod classifier;
mod config;
mod remnant;
mod toy;

pub use cascade::{CascadeModel, RemNet, StageShape};
pub use classifier::ClassificationBlock;
pub use config::{ArchConfig, ClassifierConfig, ConvSpec, NormConfig, RemnantActivation, RemnantBlockConfig};
pub use remnant::RemnantBlock;
pub use toy::{ToyClassifier, ToyConfig};

use crate::error::Result;
use crate::graph::Var;
use crate::nn::Session;
use crate::real::Real;

/// Any classifier that maps `B x H x W x C` patches to per-class logits.
pub trait Head<T: Real> {
    /// Expected `(height, width, channels)` of one input patch.
    fn input_shape(&self) -> [usize; 3];

    fn n_class(&self) -> usize;

    /// Logits with the class axis last; `trace` is called with the label and
    /// shape of every intermediate stage.
    fn forward_traced(&self, s: &mut Session<'_, T>, x: Var, trace: &mut dyn FnMut(&str, &[usize])) -> Result<Var>;

    fn forward(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.forward_traced(s, x, &mut |_, _| {})
    }
}
