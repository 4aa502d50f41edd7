//! Self-supervised sequential recommendation with learnable model
//! augmentation: a causal self-attention next-item encoder whose
//! feed-forward layers carry trainable Bernoulli dropout gates, stochastic
//! sequence augmentation, a contrastive objective over paired views, and the
//! data/training/evaluation pipeline around them.
//!
//! The guide in `book/` walks through each piece; its code snippets run as
//! doc-tests of this crate, so the book cannot drift from the library.

pub mod augment;
pub mod autodiff;
pub mod data;
pub mod eval;
pub mod lbd;
pub mod loss;
pub mod model;
pub mod train;

// Compile the book's snippets as doc-tests.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            pub struct $name;
        };
    }
    chapter!(Overview, "../../../book/src/overview.md");
    chapter!(GettingStarted, "../../../book/src/getting-started.md");
    chapter!(DataPipeline, "../../../book/src/data-pipeline.md");
    chapter!(Encoder, "../../../book/src/encoder.md");
    chapter!(LearnableDropout, "../../../book/src/learnable-dropout.md");
    chapter!(Augmentation, "../../../book/src/augmentation.md");
    chapter!(Contrastive, "../../../book/src/contrastive.md");
    chapter!(Training, "../../../book/src/training.md");
    chapter!(Evaluation, "../../../book/src/evaluation.md");
    chapter!(Autodiff, "../../../book/src/autodiff.md");
}
