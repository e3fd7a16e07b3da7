//! File formats: `QSTK` stacks, `QMAP` field maps, 16-bit PGM previews and
//! CSV tables. All binary containers are little-endian.

mod bytes;
pub mod pgm;
pub mod qmap;
pub mod qstk;
pub mod tables;

pub use pgm::{read_pgm16, write_pgm16, PgmScaling};
pub use qmap::{read_qmap, read_qmap_complex, write_qmap, write_qmap_complex};
pub use qstk::{
    read_cumulant_stack, read_frame_stack, write_cumulant_stack, write_frame_stack, QSTK_HEADER_LEN,
};
pub use tables::{write_cumulant_csv, write_fit_table, write_visibility_sweep, FitRow, VisibilityRow};
