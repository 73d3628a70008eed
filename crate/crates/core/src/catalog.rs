//! Named scenarios and tasks: the shipped set compiled into the binary, plus
//! documents loaded from directories at startup.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scenario::{load_scenario, DocumentError, Scenario};
use crate::task::{load_task, TaskError, TaskSpec};

const SHIPPED_SCENARIOS: [(&str, &str); 3] = [
    ("kitchen.toml", include_str!("../data/scenarios/kitchen.toml")),
    ("medlab.toml", include_str!("../data/scenarios/medlab.toml")),
    ("training.toml", include_str!("../data/scenarios/training.toml")),
];

const SHIPPED_TASKS: [(&str, &str); 5] = [
    ("kitchen_fruit.toml", include_str!("../data/tasks/kitchen_fruit.toml")),
    (
        "medlab_vitamins_pills.toml",
        include_str!("../data/tasks/medlab_vitamins_pills.toml"),
    ),
    (
        "kitchen_desserts_ordered.toml",
        include_str!("../data/tasks/kitchen_desserts_ordered.toml"),
    ),
    (
        "medlab_tray_ordered.toml",
        include_str!("../data/tasks/medlab_tray_ordered.toml"),
    ),
    ("training_basics.toml", include_str!("../data/tasks/training_basics.toml")),
];

/// The four tasks used by the evaluation suites, familiar first.
pub const STUDY_TASKS: [&str; 4] = [
    "kitchen_fruit",
    "medlab_vitamins_pills",
    "kitchen_desserts_ordered",
    "medlab_tray_ordered",
];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{source_name}: {error}")]
    Document {
        source_name: String,
        error: DocumentError,
    },
    #[error("{source_name}: {error}")]
    Task { source_name: String, error: TaskError },
    #[error("{source_name}: no scenario named `{environment}`")]
    MissingEnvironment {
        source_name: String,
        environment: String,
    },
    #[error("duplicate {kind} `{name}` in {source_name}")]
    Duplicate {
        kind: &'static str,
        name: String,
        source_name: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    scenarios: BTreeMap<String, Scenario>,
    tasks: BTreeMap<String, TaskSpec>,
}

impl Catalog {
    pub fn empty() -> Self {
        Catalog::default()
    }

    /// The shipped scenarios and tasks.
    pub fn builtin() -> Self {
        let mut c = Catalog::empty();
        for (file, text) in SHIPPED_SCENARIOS {
            c.add_scenario_text(file, text).expect("shipped scenario is valid");
        }
        for (file, text) in SHIPPED_TASKS {
            c.add_task_text(file, text).expect("shipped task is valid");
        }
        c
    }

    pub fn add_scenario_text(&mut self, source_name: &str, text: &str) -> Result<&Scenario, CatalogError> {
        let scenario = load_scenario(text).map_err(|error| CatalogError::Document {
            source_name: source_name.to_string(),
            error,
        })?;
        let name = scenario.name().to_string();
        if self.scenarios.contains_key(&name) {
            return Err(CatalogError::Duplicate {
                kind: "scenario",
                name,
                source_name: source_name.to_string(),
            });
        }
        Ok(self.scenarios.entry(name).or_insert(scenario))
    }

    /// Adds a task; its environment must already be present.
    pub fn add_task_text(&mut self, source_name: &str, text: &str) -> Result<&TaskSpec, CatalogError> {
        let task = load_task(text).map_err(|error| CatalogError::Document {
            source_name: source_name.to_string(),
            error,
        })?;
        let Some(scenario) = self.scenarios.get(&task.environment) else {
            return Err(CatalogError::MissingEnvironment {
                source_name: source_name.to_string(),
                environment: task.environment,
            });
        };
        task.validate_against(&scenario.scene)
            .map_err(|error| CatalogError::Task {
                source_name: source_name.to_string(),
                error,
            })?;
        if self.tasks.contains_key(&task.id) {
            return Err(CatalogError::Duplicate {
                kind: "task",
                name: task.id,
                source_name: source_name.to_string(),
            });
        }
        let id = task.id.clone();
        Ok(self.tasks.entry(id).or_insert(task))
    }

    /// Loads every `*.toml` in the given directories, scenarios first.
    pub fn load_dirs(&mut self, scenario_dir: Option<&Path>, task_dir: Option<&Path>) -> Result<(), CatalogError> {
        if let Some(dir) = scenario_dir {
            for (path, text) in read_toml_dir(dir)? {
                self.add_scenario_text(&path.display().to_string(), &text)?;
            }
        }
        if let Some(dir) = task_dir {
            for (path, text) in read_toml_dir(dir)? {
                self.add_task_text(&path.display().to_string(), &text)?;
            }
        }
        Ok(())
    }

    pub fn scenario(&self, name: &str) -> Option<&Scenario> {
        self.scenarios.get(name)
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.get(id)
    }

    /// The task together with its scenario.
    pub fn task_with_scenario(&self, id: &str) -> Option<(&TaskSpec, &Scenario)> {
        let task = self.tasks.get(id)?;
        Some((task, self.scenarios.get(&task.environment)?))
    }

    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.values()
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }
}

fn read_toml_dir(dir: &Path) -> Result<Vec<(PathBuf, String)>, CatalogError> {
    let io = |path: &Path, e: std::io::Error| CatalogError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| fs::read_to_string(&p).map(|t| (p.clone(), t)).map_err(|e| io(&p, e)))
        .collect()
}
