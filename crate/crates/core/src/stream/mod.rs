//! Notes, tokenisation, lexicon entity extraction, disjoint task streams and
//! the synthetic clinical-note generator.

mod io;
mod lexicon;
mod note;
mod split;
mod synth;
mod vocab;

pub use io::{load_lexicon, load_stream, read_stream, save_lexicon, save_stream, write_stream, STREAM_FORMAT, STREAM_VERSION};
pub use lexicon::{EntityLexicon, LexiconEntry};
pub use note::{Note, RawRecord, Task, TaskStream};
pub use split::{split_tasks, SplitConfig};
pub use synth::{synthesize_stream, ClassSpec, GeneratorSpec};
pub use vocab::{CharVocab, UNK};
