//! Bundled demonstration network.
//!
//! Eight agents in two clusters of four. Within each cluster the agents
//! sit on a bidirectional cycle (8 directed edges); cluster 1 uses the
//! oscillating weight `2+cos(2*t)`, cluster 2 the constant weight `1`.
//! The clusters exchange two directed edges each way, all carrying
//! `eps*(sin(t)+2)/3`, so the whole external layer scales with `eps`.
//!
//! The exact edge set of the original figure this reconstructs is not
//! published; this layout is a documented representative choice that
//! satisfies the intra- and inter-cluster coupling assumptions by
//! construction.

use crate::network::{NetworkSpec, Relabeling};
use crate::Result;

/// Initial condition used by the demonstration runs.
pub const DEMO_X0: [f64; 8] = [6.0, 6.3, 4.4, 5.2, 3.0, 3.5, 0.4, 2.2];

/// Render the demo network as a config file with the given coupling
/// scale. `horizon` bounds the pre-validated simulation window.
pub fn demo_config(eps: f64, horizon: f64) -> String {
    let cycle = |offset: usize, expr: &str| -> String {
        let mut out = String::new();
        let ring = [(1, 2), (2, 3), (3, 4), (4, 1)];
        for (i, j) in ring {
            out.push_str(&format!("w.{}.{} = \"{expr}\"\n", i + offset, j + offset));
            out.push_str(&format!("w.{}.{} = \"{expr}\"\n", j + offset, i + offset));
        }
        out
    };
    let external = "eps*(sin(t)+2)/3";
    format!(
        "n = 8\n\
         eps = {eps}\n\
         horizon = {horizon}\n\
         period = {:.17}\n\
         clusters = [[1, 2, 3, 4], [5, 6, 7, 8]]\n\
         x0 = [6.0, 6.3, 4.4, 5.2, 3.0, 3.5, 0.4, 2.2]\n\
         {}{}\
         w.1.5 = \"{external}\"\n\
         w.5.1 = \"{external}\"\n\
         w.4.8 = \"{external}\"\n\
         w.8.4 = \"{external}\"\n",
        2.0 * std::f64::consts::PI,
        cycle(0, "2+cos(2*t)"),
        cycle(4, "1"),
    )
}

/// Load the demo network at the given coupling scale.
pub fn demo_spec(eps: f64) -> Result<(NetworkSpec, Relabeling)> {
    NetworkSpec::load(&demo_config(eps, 40.0))
}
