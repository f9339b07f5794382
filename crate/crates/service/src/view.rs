//! Renderable trajectory payloads. Rewards are never included.

use pbrl_core::mdp::{LayeredMdp, Step, Trajectory};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepView {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridView {
    pub size: usize,
    /// Block cells as `(x, y)`.
    pub blocks: Vec<(usize, usize)>,
    /// Cells visited in order, ending at the bottom-right corner.
    pub path: Vec<(usize, usize)>,
}

/// A trajectory as shown to the labeler. `kind` is `grid` when a grid
/// drawing is available and `generic` otherwise; `steps` is always present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub kind: String,
    pub start_layer: usize,
    pub steps: Vec<StepView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridView>,
}

impl TrajectoryView {
    pub fn render(mdp: &LayeredMdp, trajectory: &Trajectory) -> Self {
        let steps: Vec<StepView> = trajectory
            .states()
            .zip(&trajectory.steps)
            .map(|(s, step)| StepView { layer: s.layer, state: s.index, action: step.action })
            .collect();
        let grid = mdp.provenance().grid.as_ref().map(|g| {
            let mut path: Vec<(usize, usize)> = trajectory.states().map(|s| g.cell(s)).collect();
            path.push((g.size - 1, g.size - 1));
            GridView { size: g.size, blocks: g.blocks.clone(), path }
        });
        Self {
            kind: if grid.is_some() { "grid" } else { "generic" }.into(),
            start_layer: trajectory.start_layer,
            steps,
            grid,
        }
    }

    /// The trajectory this view was rendered from.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            start_layer: self.start_layer,
            steps: self.steps.iter().map(|s| Step { state: s.state, action: s.action }).collect(),
        }
    }
}
