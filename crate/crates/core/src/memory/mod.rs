//! Three-tier surprise-driven memory.
//!
//! Frames enter a sensory FIFO. A frame leaving the window is pooled 2x when
//! its surprise is below the threshold and appended to long-term memory, which
//! is consolidated back under its token budget. Queries retrieve the top-K
//! most similar stored frames into working memory.

mod engine;
mod long_term;
mod recall;

pub use engine::{write_trace_csv, MemoryConfig, MemoryEngine, SensoryBuffer, TraceRow};
pub use long_term::{ConsolidationStrategy, LongTermMemory, MemoryItem, WorkingMemory};
pub use recall::{lcs_len, match_option, recovered_sequence, RecallAnswer};
