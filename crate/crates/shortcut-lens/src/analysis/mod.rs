//! Statistics and figures describing what the lens changes: difference
//! images, mean reconstruction-loss maps, cross-run correlations and
//! rankings, and panel renderings.

mod recon;
mod render;

pub use recon::{
    lens_difference, mean_recon_map, rank_by_recon_difference, recon_correlation, ReconStats,
};
pub use render::{render_panel, PANEL_SEPARATOR_PX};
