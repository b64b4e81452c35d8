//! All-or-nothing writing of a command's output files.

use std::fs;
use std::path::Path;

use crate::CliError;

/// Files produced by one command, held in memory until the command succeeds.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Writes every file into a staging directory next to `dir`, then moves
    /// them into place. A missing `dir` is created by renaming the staging
    /// directory itself; otherwise each file is renamed over its old version.
    pub fn commit(&self, dir: &Path) -> Result<(), CliError> {
        if dir.exists() && !dir.is_dir() {
            return Err(CliError::Output(format!("{} exists and is not a directory", dir.display())));
        }
        let parent = match dir.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => Path::new(".").to_path_buf(),
        };
        fs::create_dir_all(&parent)
            .map_err(|e| CliError::Output(format!("cannot create {}: {e}", parent.display())))?;
        let staging = tempfile::Builder::new()
            .prefix(".jda-staging-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::Output(format!("cannot stage outputs in {}: {e}", parent.display())))?;
        for (name, contents) in &self.files {
            fs::write(staging.path().join(name), contents)
                .map_err(|e| CliError::Output(format!("cannot write {name}: {e}")))?;
        }
        if !dir.exists() {
            let staged = staging.keep();
            return fs::rename(&staged, dir).map_err(|e| {
                let _ = fs::remove_dir_all(&staged);
                CliError::Output(format!("cannot move outputs to {}: {e}", dir.display()))
            });
        }
        for (name, _) in &self.files {
            fs::rename(staging.path().join(name), dir.join(name))
                .map_err(|e| CliError::Output(format!("cannot move {name} into {}: {e}", dir.display())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn creates_and_replaces() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("nested").join("out");
        let mut o = Outputs::new();
        o.add("a.txt", "one".into());
        o.commit(&dir).unwrap();
        assert_eq!(fs::read_to_string(dir.join("a.txt")).unwrap(), "one");
        let mut o = Outputs::new();
        o.add("a.txt", "two".into());
        o.add("b.txt", "three".into());
        o.commit(&dir).unwrap();
        assert_eq!(fs::read_to_string(dir.join("a.txt")).unwrap(), "two");
        // No staging directories are left behind.
        let leftovers = fs::read_dir(root.path().join("nested")).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn refuses_a_file_in_place_of_the_directory() {
        let root = tempfile::tempdir().unwrap();
        let file = root.path().join("taken");
        fs::write(&file, "x").unwrap();
        let mut o = Outputs::new();
        o.add("a.txt", "one".into());
        assert!(o.commit(&file).is_err());
    }
}
