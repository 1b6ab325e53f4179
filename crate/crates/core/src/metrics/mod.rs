//! Dice evaluation, run histories and their CSV/SVG/summary renderings.

mod dice;
mod history;
mod summary;
mod svg;

pub use dice::{dice, evaluate, DEFAULT_THRESHOLD};
pub use history::{
    read_gate_csv, read_history_csv, write_gate_csv, write_history_csv, HistoryRow, RunHistory,
    RunMeta, HISTORY_HEADER,
};
pub use summary::{format_table, summarize, write_summary_csv, SummaryRow};
pub use svg::render_curves;
