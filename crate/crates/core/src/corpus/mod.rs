//! Tokenization, object surface forms, context-object splitting, file
//! formats and the synthetic toy world.

pub mod bundle;
pub mod dataset;
pub mod io;
pub mod objects;
pub mod split;
pub mod toyworld;
pub mod vocab;

pub use dataset::{Dataset, DatasetSplit, ImageRecord, Pair, RawSplit, SplitRole};
pub use io::CaptionRecord;
pub use objects::{ObjectVocabulary, SurfaceForms};
pub use split::{merge_context, merge_split, Context, ContextObjectSplit, ObjectMention, Splitter};
pub use toyworld::{generate_toy_world, ToyConfig, ToyImage, ToyWorld};
pub use vocab::{normalize, tokenize, Caption, TokenId, Vocabulary};
