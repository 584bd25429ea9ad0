use serde::{Deserialize, Serialize};

use crate::corpus::ChunkingPolicy;
use crate::embed::fnv1a64;
use crate::evaluation::DEFAULT_THETA;
use crate::prompt::PromptVariables;
use crate::rag::{Mode, RunConfig, DEFAULT_K, DEFAULT_MODEL};

use super::RunnerError;

/// Hyperparameter sweep for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub task_id: String,
    pub modes: Vec<Mode>,
    /// Only used by retrieval-augmented runs.
    #[serde(default)]
    pub n_paper_levels: Vec<usize>,
    pub temperature_levels: Vec<f64>,
    pub repetitions: usize,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chunking: ChunkingPolicy,
    pub prompt_vars: PromptVariables,
}

fn default_model() -> String {
    DEFAULT_MODEL.into()
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}

impl ExperimentGrid {
    /// The reference sweep: `n_paper` in {1, 2, 3, 4, 5, 10}, temperature in
    /// {0.5, 0.75, 1.0, 1.25, 1.5}, ten repetitions each.
    pub fn reference(task_id: &str, modes: Vec<Mode>, prompt_vars: PromptVariables) -> Self {
        Self {
            task_id: task_id.into(),
            modes,
            n_paper_levels: vec![1, 2, 3, 4, 5, 10],
            temperature_levels: vec![0.5, 0.75, 1.0, 1.25, 1.5],
            repetitions: 10,
            model: default_model(),
            k: DEFAULT_K,
            theta: DEFAULT_THETA,
            seed: 0,
            chunking: ChunkingPolicy::default(),
            prompt_vars,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let invalid = |m: String| Err(RunnerError::InvalidGrid(m));
        if self.modes.is_empty() {
            return invalid("no modes".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return invalid(format!("mode {m} listed twice"));
            }
        }
        if self.modes.contains(&Mode::Rag) {
            if self.n_paper_levels.is_empty() {
                return invalid("rag mode needs n_paper levels".into());
            }
            if self.n_paper_levels.contains(&0) {
                return invalid("n_paper levels must be positive".into());
            }
            if has_duplicates(&self.n_paper_levels) {
                return invalid("duplicate n_paper level".into());
            }
        }
        if self.temperature_levels.is_empty() {
            return invalid("no temperature levels".into());
        }
        if let Some(t) = self
            .temperature_levels
            .iter()
            .find(|t| !(0.0..=2.0).contains(*t))
        {
            return invalid(format!("temperature {t} outside [0, 2]"));
        }
        let temps: Vec<u64> = self
            .temperature_levels
            .iter()
            .map(|t| t.to_bits())
            .collect();
        if has_duplicates(&temps) {
            return invalid("duplicate temperature level".into());
        }
        if self.repetitions == 0 {
            return invalid("repetitions must be at least 1".into());
        }
        if self.k == 0 {
            return invalid("k must be positive".into());
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return invalid(format!("theta {} outside (0, 1)", self.theta));
        }
        self.chunking
            .validate()
            .map_err(|e| RunnerError::InvalidGrid(e.to_string()))?;
        self.prompt_vars
            .validate()
            .map_err(|e| RunnerError::InvalidGrid(e.to_string()))?;
        Ok(())
    }

    /// Number of runs [`expand_grid`] produces.
    pub fn run_count(&self) -> usize {
        self.modes
            .iter()
            .map(|m| match m {
                Mode::Rag => self.n_paper_levels.len(),
                Mode::ZeroShot => 1,
            })
            .sum::<usize>()
            * self.temperature_levels.len()
            * self.repetitions
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, x)| items[..i].contains(x))
}

/// Per-run seed derived from the grid seed and the run id.
pub fn derive_seed(grid_seed: u64, run_id: &str) -> u64 {
    let mut bytes = grid_seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(run_id.as_bytes());
    fnv1a64(&bytes)
}

/// Cartesian product in the order mode, n_paper, temperature, repetition.
pub fn expand_grid(grid: &ExperimentGrid) -> Result<Vec<RunConfig>, RunnerError> {
    grid.validate()?;
    let mut configs = Vec::with_capacity(grid.run_count());
    for &mode in &grid.modes {
        let n_levels: Vec<Option<usize>> = match mode {
            Mode::Rag => grid.n_paper_levels.iter().copied().map(Some).collect(),
            Mode::ZeroShot => vec![None],
        };
        for n_paper in n_levels {
            for &temperature in &grid.temperature_levels {
                for repetition_index in 0..grid.repetitions {
                    let mut config = RunConfig {
                        mode,
                        n_paper,
                        temperature,
                        model: grid.model.clone(),
                        k: grid.k,
                        repetition_index,
                        chunking: grid.chunking,
                        prompt_vars: grid.prompt_vars.clone(),
                        seed: None,
                        max_output_tokens: 4096,
                    };
                    config.seed = Some(derive_seed(grid.seed, &config.run_id()));
                    configs.push(config);
                }
            }
        }
    }
    Ok(configs)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use crate::prompt::presets;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn run_count_formula(rag in any::<bool>(), zs in any::<bool>(), np in 1usize..7, nt in 1usize..6, reps in 1usize..5) {
            prop_assume!(rag || zs);
            let mut modes = vec![];
            if rag { modes.push(Mode::Rag); }
            if zs { modes.push(Mode::ZeroShot); }
            let mut grid = ExperimentGrid::reference("t", modes, presets::human_computer_interaction());
            grid.n_paper_levels = (1..=np).collect();
            grid.temperature_levels = (0..nt).map(|i| i as f64 * 0.25).collect();
            grid.repetitions = reps;
            let expected = usize::from(rag) * np * nt * reps + usize::from(zs) * nt * reps;
            prop_assert_eq!(expand_grid(&grid).unwrap().len(), expected);
        }
    }
}
