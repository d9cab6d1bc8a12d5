//! Repeated planning over seeds with a success and timing table.

use std::path::PathBuf;

use wmm_core::costs::CostDesign;
use wmm_core::planner::{plan, PlanContext};
use wmm_core::sim::{rollout, SimOptions};
use wmm_core::trajopt::within_tolerance;

use crate::{load_scenario, Failure};

/// Success counts and planning times (s) of one scenario.
#[derive(Debug, Default)]
pub struct Row {
    pub name: String,
    pub successes: u64,
    pub failures: u64,
    pub times: Vec<f64>,
}

impl Row {
    fn stats(&self) -> (f64, f64, f64) {
        if self.times.is_empty() {
            return (f64::NAN, f64::NAN, f64::NAN);
        }
        let mean = self.times.iter().sum::<f64>() / self.times.len() as f64;
        let min = self.times.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, min, max)
    }
}

pub fn run(paths: &[PathBuf], repeats: u64, cost: Option<CostDesign>) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in paths {
        let (_, mut sc) = load_scenario(path)?;
        if let Some(design) = cost {
            sc.costs.design = design;
        }
        let mut row = Row {
            name: sc.name.clone(),
            ..Row::default()
        };
        for seed in 0..repeats {
            let settings = sc.planner_with_seed(seed);
            let ctx = PlanContext {
                plant: &sc.plant,
                cost: &sc.costs,
                phase: &sc.phase,
                settings: &settings,
            };
            let result = plan(&ctx, &sc.q_init, &sc.goal)?;
            // A plan only counts once the simulator reproduces it.
            let verified = match &result.path {
                Some(p) => {
                    let trace = rollout(&sc.plant, &p.start, &p.inputs(), &SimOptions::default())?;
                    trace.failure.is_none()
                        && within_tolerance(&trace.last_state().q_u, &sc.goal, settings.goal_tolerance)
                }
                None => false,
            };
            if verified {
                row.successes += 1;
                row.times.push(result.stats.wall_time);
            } else {
                row.failures += 1;
            }
        }
        rows.push(row);
    }
    println!(
        "{:<32} {:>8} {:>8} {:>8} {:>10} {:>10} {:>10}",
        "scenario", "success", "failed", "rate", "mean [s]", "min [s]", "max [s]"
    );
    for row in &rows {
        let (mean, min, max) = row.stats();
        println!(
            "{:<32} {:>8} {:>8} {:>7.0}% {:>10.2} {:>10.2} {:>10.2}",
            row.name,
            row.successes,
            row.failures,
            100.0 * row.successes as f64 / repeats.max(1) as f64,
            mean,
            min,
            max
        );
    }
    Ok(())
}
