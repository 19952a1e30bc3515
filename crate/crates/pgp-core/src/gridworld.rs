//! ASCII gridworld environments. Maps use `S` (start), `H` (hole), `G`
//! (absorbing terminal) and ` ` (safe tile). Four actions move
//! up/down/left/right; walls clamp; an optional slip probability diverts
//! the move to each perpendicular direction.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{exact_occupancy, OccupancyMeasure, TabularMdp};
use crate::objectives::ConstraintSpec;
use crate::policy::{embed_policy, SoftmaxPolicy};

pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;
pub const N_ACTIONS: usize = 4;
pub const ACTION_NAMES: [&str; 4] = ["up", "down", "left", "right"];

/// The 6×6 lake with four holes in the central 2×2 block, start at the
/// top-left and the absorbing terminal at the bottom-right.
pub const DEFAULT_LAKE_MAP: &str = "S     \n      \n  HH  \n  HH  \n      \n     G";

/// Named cost vectors over tiles. `HolesPenalized*` carries a positive
/// hole cost with a small negative elsewhere, so `⟨c, λ⟩ ≤ 0` penalizes
/// hole visits; the `Literal*` profiles keep the printed signs (negative
/// holes, positive elsewhere), which instead reward hole visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostProfile {
    /// +50 at holes, -0.001 elsewhere.
    HolesPenalized,
    /// +2 at holes, -0.001 elsewhere (relaxed variant).
    HolesPenalizedRelaxed,
    /// -50 at holes, +0.001 elsewhere, exactly as printed.
    Literal,
    /// -2 at holes, +0.001 elsewhere.
    LiteralRelaxed,
}

impl CostProfile {
    pub fn hole_cost(self) -> f64 {
        match self {
            CostProfile::HolesPenalized => 50.0,
            CostProfile::HolesPenalizedRelaxed => 2.0,
            CostProfile::Literal => -50.0,
            CostProfile::LiteralRelaxed => -2.0,
        }
    }

    pub fn safe_cost(self) -> f64 {
        match self {
            CostProfile::HolesPenalized | CostProfile::HolesPenalizedRelaxed => -0.001,
            CostProfile::Literal | CostProfile::LiteralRelaxed => 0.001,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "holes_penalized" => Ok(CostProfile::HolesPenalized),
            "holes_penalized_relaxed" => Ok(CostProfile::HolesPenalizedRelaxed),
            "literal" => Ok(CostProfile::Literal),
            "literal_relaxed" => Ok(CostProfile::LiteralRelaxed),
            other => Err(Error::InvalidConfig(format!(
                "unknown cost profile `{other}` (expected holes_penalized, \
                 holes_penalized_relaxed, literal, literal_relaxed)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostProfile::HolesPenalized => "holes_penalized",
            CostProfile::HolesPenalizedRelaxed => "holes_penalized_relaxed",
            CostProfile::Literal => "literal",
            CostProfile::LiteralRelaxed => "literal_relaxed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tile {
    Start,
    Safe,
    Hole,
    Terminal,
}

/// Parsed gridworld description.
#[derive(Debug, Clone)]
pub struct GridworldSpec {
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<Tile>,
    pub start: usize,
    pub slip_prob: f64,
    pub discount: f64,
    pub cost_profile: CostProfile,
}

impl GridworldSpec {
    /// Parses an ASCII map. The map must be rectangular with exactly one
    /// `S`; missing trailing blanks are an error (rows must align).
    pub fn parse(
        map: &str,
        slip_prob: f64,
        discount: f64,
        cost_profile: CostProfile,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&slip_prob) {
            return Err(Error::InvalidConfig(format!(
                "slip probability {slip_prob} outside [0, 1)"
            )));
        }
        let lines: Vec<&str> = map.lines().collect();
        if lines.is_empty() {
            return Err(Error::MapParse {
                row: 0,
                col: 0,
                msg: "empty map".into(),
            });
        }
        let cols = lines[0].chars().count();
        let rows = lines.len();
        let mut tiles = Vec::with_capacity(rows * cols);
        let mut start = None;
        for (r, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != cols {
                return Err(Error::MapParse {
                    row: r,
                    col: chars.len(),
                    msg: format!("row has {} columns, expected {cols}", chars.len()),
                });
            }
            for (c, ch) in chars.iter().enumerate() {
                let tile = match ch {
                    'S' => {
                        if start.is_some() {
                            return Err(Error::MapParse {
                                row: r,
                                col: c,
                                msg: "second start tile".into(),
                            });
                        }
                        start = Some(r * cols + c);
                        Tile::Start
                    }
                    'H' => Tile::Hole,
                    'G' => Tile::Terminal,
                    ' ' | '.' => Tile::Safe,
                    other => {
                        return Err(Error::MapParse {
                            row: r,
                            col: c,
                            msg: format!("unexpected character {other:?}"),
                        })
                    }
                };
                tiles.push(tile);
            }
        }
        let start = start.ok_or(Error::MapParse {
            row: 0,
            col: 0,
            msg: "no start tile".into(),
        })?;
        Ok(Self {
            rows,
            cols,
            tiles,
            start,
            slip_prob,
            discount,
            cost_profile,
        })
    }

    pub fn default_lake(discount: f64, cost_profile: CostProfile) -> Self {
        Self::parse(DEFAULT_LAKE_MAP, 0.0, discount, cost_profile)
            .expect("the built-in map parses")
    }

    pub fn n_states(&self) -> usize {
        self.rows * self.cols
    }

    fn step(&self, state: usize, action: usize) -> usize {
        let (r, c) = (state / self.cols, state % self.cols);
        let (nr, nc) = match action {
            ACTION_UP => (r.saturating_sub(1), c),
            ACTION_DOWN => ((r + 1).min(self.rows - 1), c),
            ACTION_LEFT => (r, c.saturating_sub(1)),
            ACTION_RIGHT => (r, (c + 1).min(self.cols - 1)),
            _ => unreachable!("4 actions"),
        };
        nr * self.cols + nc
    }

    /// Per-pair cost vector for the configured profile; costs depend on
    /// the tile only, shared across actions.
    pub fn cost_vector(&self) -> DVector<f64> {
        let mut cost = DVector::zeros(self.n_states() * N_ACTIONS);
        for (s, tile) in self.tiles.iter().enumerate() {
            let value = match tile {
                Tile::Hole => self.cost_profile.hole_cost(),
                _ => self.cost_profile.safe_cost(),
            };
            for a in 0..N_ACTIONS {
                cost[s * N_ACTIONS + a] = value;
            }
        }
        cost
    }
}

/// Builds the MDP and the linear hole constraint `⟨c, λ⟩ ≤ 0` for a
/// gridworld. Terminal tiles are absorbing under every action.
pub fn build_frozenlake(spec: &GridworldSpec) -> Result<(TabularMdp, ConstraintSpec)> {
    let n_states = spec.n_states();
    let mut transitions = vec![0.0; n_states * N_ACTIONS * n_states];
    let mut absorbing = BTreeSet::new();
    for s in 0..n_states {
        if spec.tiles[s] == Tile::Terminal {
            absorbing.insert(s);
        }
        for a in 0..N_ACTIONS {
            let row = &mut transitions[(s * N_ACTIONS + a) * n_states..][..n_states];
            if spec.tiles[s] == Tile::Terminal {
                row[s] = 1.0;
                continue;
            }
            // Perpendicular slips share slip_prob equally.
            let perpendicular: [usize; 2] = match a {
                ACTION_UP | ACTION_DOWN => [ACTION_LEFT, ACTION_RIGHT],
                _ => [ACTION_UP, ACTION_DOWN],
            };
            row[spec.step(s, a)] += 1.0 - spec.slip_prob;
            for p in perpendicular {
                row[spec.step(s, p)] += spec.slip_prob / 2.0;
            }
        }
    }
    let mut init = vec![0.0; n_states];
    init[spec.start] = 1.0;
    let mdp = TabularMdp::new(
        n_states,
        N_ACTIONS,
        transitions,
        init,
        spec.discount,
        absorbing,
    )?;
    let constraint = ConstraintSpec::Linear {
        cost: spec.cost_vector(),
        c_max: 0.0,
    };
    Ok((mdp, constraint))
}

/// Deterministic right-then-down reference policy embedded into the
/// softmax class, with its exact occupancy as the reference measure for
/// the imitation constraints.
pub fn reference_trajectory_policy(
    spec: &GridworldSpec,
    mdp: &TabularMdp,
    epsilon: f64,
) -> Result<(SoftmaxPolicy, OccupancyMeasure)> {
    let n_states = spec.n_states();
    let mut table = DMatrix::zeros(n_states, N_ACTIONS);
    for s in 0..n_states {
        let (r, c) = (s / spec.cols, s % spec.cols);
        let action = if spec.tiles[s] == Tile::Terminal {
            ACTION_UP // designated no-op on absorbing tiles
        } else if c < spec.cols - 1 {
            ACTION_RIGHT
        } else if r < spec.rows - 1 {
            ACTION_DOWN
        } else {
            ACTION_UP
        };
        table[(s, action)] = 1.0;
    }
    let embedded = embed_policy(&table, epsilon, false)?;
    let occupancy = exact_occupancy(mdp, &embedded.policy)?;
    Ok((embedded.policy, occupancy))
}

/// Plot-ready comma-separated grids: the argmax action index per tile and
/// the exact per-tile state occupancy of a policy.
pub fn policy_tables(
    spec: &GridworldSpec,
    mdp: &TabularMdp,
    policy: &SoftmaxPolicy,
) -> Result<(String, String)> {
    let actions = policy.argmax_actions();
    let occupancy = exact_occupancy(mdp, policy)?;
    let mut action_grid = String::new();
    let mut occupancy_grid = String::new();
    for r in 0..spec.rows {
        let acts: Vec<String> = (0..spec.cols)
            .map(|c| format!("{}", actions[r * spec.cols + c]))
            .collect();
        action_grid.push_str(&acts.join(","));
        action_grid.push('\n');
        let occ: Vec<String> = (0..spec.cols)
            .map(|c| {
                let s = r * spec.cols + c;
                let mass: f64 = (0..N_ACTIONS)
                    .map(|a| occupancy.values[s * N_ACTIONS + a])
                    .sum();
                format!("{mass}")
            })
            .collect();
        occupancy_grid.push_str(&occ.join(","));
        occupancy_grid.push('\n');
    }
    Ok((action_grid, occupancy_grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_batch, truncated_occupancy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn minimal_two_tile_map() {
        let spec = GridworldSpec::parse("S ", 0.0, 0.9, CostProfile::HolesPenalized).unwrap();
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        assert_eq!(mdp.n_states(), 2);
        // Right moves, left clamps.
        assert_eq!(mdp.transition_row(0, ACTION_RIGHT)[1], 1.0);
        assert_eq!(mdp.transition_row(0, ACTION_LEFT)[0], 1.0);
        assert_eq!(mdp.transition_row(0, ACTION_UP)[0], 1.0);
    }

    #[test]
    fn default_lake_layout() {
        let spec = GridworldSpec::default_lake(0.99, CostProfile::HolesPenalized);
        assert_eq!((spec.rows, spec.cols), (6, 6));
        let holes: Vec<usize> = spec
            .tiles
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Tile::Hole)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(holes, vec![14, 15, 20, 21], "central 2x2 block");
        assert_eq!(spec.tiles[35], Tile::Terminal);
        assert_eq!(spec.start, 0);
        let (mdp, constraint) = build_frozenlake(&spec).unwrap();
        assert!(mdp.absorbing().contains(&35));
        match constraint {
            ConstraintSpec::Linear { cost, c_max } => {
                assert_eq!(c_max, 0.0);
                assert_eq!(cost[14 * 4], 50.0);
                assert_eq!(cost[0], -0.001);
            }
            _ => panic!("lake constraint is linear"),
        }
    }

    #[test]
    fn malformed_maps_report_positions() {
        let err = GridworldSpec::parse("S \nXX", 0.0, 0.9, CostProfile::Literal).unwrap_err();
        match err {
            Error::MapParse { row, col, .. } => assert_eq!((row, col), (1, 0)),
            other => panic!("unexpected error {other}"),
        }
        assert!(GridworldSpec::parse("  ", 0.0, 0.9, CostProfile::Literal).is_err());
        assert!(GridworldSpec::parse("SS", 0.0, 0.9, CostProfile::Literal).is_err());
        assert!(GridworldSpec::parse("S \n  X", 0.0, 0.9, CostProfile::Literal).is_err());
    }

    #[test]
    fn slip_spreads_probability() {
        let spec = GridworldSpec::parse("S \n  ", 0.2, 0.9, CostProfile::HolesPenalized).unwrap();
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let row = mdp.transition_row(0, ACTION_RIGHT);
        assert_abs_diff_eq!(row[1], 0.8, epsilon = 1e-12);
        // Perpendicular slips: up clamps back to 0, down goes to tile 2.
        assert_abs_diff_eq!(row[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(row[2], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn reference_policy_on_2x2() {
        let spec = GridworldSpec::parse("S \n G", 0.0, 0.9, CostProfile::HolesPenalized).unwrap();
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let (policy, occupancy) = reference_trajectory_policy(&spec, &mdp, 1e-3).unwrap();
        let probs = policy.prob_matrix();
        assert!(probs[(0, ACTION_RIGHT)] > 0.99);
        assert!(probs[(1, ACTION_DOWN)] > 0.99);
        // Mass concentrates on the top row and right column.
        let tile_mass = |s: usize| -> f64 {
            (0..N_ACTIONS).map(|a| occupancy.values[s * N_ACTIONS + a]).sum()
        };
        assert!(tile_mass(0) + tile_mass(1) + tile_mass(3) > 0.999);
        assert!(tile_mass(2) < 1e-3);
    }

    #[test]
    fn reference_occupancy_top_and_right_on_lake() {
        let spec = GridworldSpec::default_lake(0.99, CostProfile::HolesPenalized);
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let (_, occupancy) = reference_trajectory_policy(&spec, &mdp, 1e-3).unwrap();
        let mut on_path = 0.0;
        for s in 0..36 {
            let (r, c) = (s / 6, s % 6);
            let mass: f64 = (0..N_ACTIONS).map(|a| occupancy.values[s * 4 + a]).sum();
            if r == 0 || c == 5 {
                on_path += mass;
            }
        }
        assert!(on_path > 0.98, "right-then-down path mass {on_path}");
    }

    #[test]
    fn initial_state_frequencies_match_mu0() {
        let spec = GridworldSpec::default_lake(0.99, CostProfile::HolesPenalized);
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let policy = SoftmaxPolicy::uniform(36, 4, 1.0);
        let batch = sample_batch(&mdp, &policy, 1, 10_000, 77, 0).unwrap();
        let mut freq = vec![0.0; 36];
        for t in &batch {
            freq[t.steps[0].0] += 1.0 / 10_000.0;
        }
        for (s, &f) in freq.iter().enumerate() {
            let band = 3.0 / (10_000f64).sqrt();
            assert!(
                (f - mdp.init_dist()[s]).abs() <= band,
                "state {s}: frequency {f}"
            );
        }
    }

    #[test]
    fn truncated_mass_on_lake() {
        let spec = GridworldSpec::default_lake(0.9, CostProfile::HolesPenalized);
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let policy = SoftmaxPolicy::uniform(36, 4, 1.0);
        let occ = truncated_occupancy(&mdp, &policy, 22).unwrap();
        assert_abs_diff_eq!(occ.total_mass(), 1.0 - 0.9f64.powi(22), epsilon = 1e-10);
    }

    #[test]
    fn policy_tables_shapes() {
        let spec = GridworldSpec::default_lake(0.99, CostProfile::HolesPenalized);
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let policy = SoftmaxPolicy::uniform(36, 4, 1.0);
        let (actions, occupancy) = policy_tables(&spec, &mdp, &policy).unwrap();
        assert_eq!(actions.lines().count(), 6);
        assert_eq!(occupancy.lines().count(), 6);
        assert_eq!(actions.lines().next().unwrap().split(',').count(), 6);
        // Ties break to the lowest action index on the uniform policy.
        assert!(actions.lines().all(|l| l.split(',').all(|v| v == "0")));
        let total: f64 = occupancy
            .lines()
            .flat_map(|l| l.split(','))
            .map(|v| v.parse::<f64>().unwrap())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn unknown_profile_is_rejected() {
        assert!(CostProfile::parse("bogus").is_err());
        assert_eq!(
            CostProfile::parse("holes_penalized").unwrap(),
            CostProfile::HolesPenalized
        );
    }

    fn occupancy_mass_check(slip: f64) {
        let spec = GridworldSpec::parse("S  \n HG", slip, 0.95, CostProfile::Literal).unwrap();
        let (mdp, _) = build_frozenlake(&spec).unwrap();
        let policy = SoftmaxPolicy::uniform(6, 4, 1.0);
        let occ = crate::mdp::exact_occupancy(&mdp, &policy).unwrap();
        assert_abs_diff_eq!(occ.total_mass(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn slippery_kernel_is_row_stochastic() {
        occupancy_mass_check(0.0);
        occupancy_mass_check(0.3);
    }
}
