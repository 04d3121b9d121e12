//! Named parameter tensors with prunability flags and binary masks.

use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("duplicate parameter name {0}")]
    Duplicate(String),
    #[error("unknown parameter {0}")]
    Unknown(String),
}

/// One named tensor. `mask[j] == false` marks coordinate `j` as pruned by
/// the most recent prune event.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub prunable: bool,
    pub mask: Vec<bool>,
}

impl Param {
    pub fn pruned_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }
}

/// Parameters kept in lexicographic name order; that order, followed by
/// row-major position, is the coordinate order used for scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, prunable: bool) -> Result<(), ParamError> {
        match self.entries.binary_search_by(|p| p.name.as_str().cmp(name)) {
            Ok(_) => Err(ParamError::Duplicate(name.to_string())),
            Err(pos) => {
                let mask = vec![true; tensor.len()];
                self.entries.insert(
                    pos,
                    Param {
                        name: name.to_string(),
                        tensor,
                        prunable,
                        mask,
                    },
                );
                Ok(())
            }
        }
    }

    /// Inserts a fully specified entry, e.g. when loading a checkpoint.
    pub fn insert_param(&mut self, param: Param) -> Result<(), ParamError> {
        match self.entries.binary_search_by(|p| p.name.cmp(&param.name)) {
            Ok(_) => Err(ParamError::Duplicate(param.name)),
            Err(pos) => {
                self.entries.insert(pos, param);
                Ok(())
            }
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.binary_search_by(|p| p.name.as_str().cmp(name)).ok()
    }

    pub fn get(&self, name: &str) -> Result<&Param, ParamError> {
        self.index_of(name)
            .map(|i| &self.entries[i])
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, ParamError> {
        match self.index_of(name) {
            Some(i) => Ok(&mut self.entries[i]),
            None => Err(ParamError::Unknown(name.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.entries.iter_mut()
    }

    pub fn at(&self, index: usize) -> &Param {
        &self.entries[index]
    }

    pub fn prunable(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter().filter(|p| p.prunable)
    }

    /// Total coordinates across prunable tensors.
    pub fn prunable_count(&self) -> usize {
        self.prunable().map(|p| p.tensor.len()).sum()
    }

    /// Coordinates currently masked out across prunable tensors.
    pub fn masked_count(&self) -> usize {
        self.prunable().map(Param::pruned_count).sum()
    }

    /// Exactly-zero values across prunable tensors.
    pub fn zero_count(&self) -> usize {
        self.prunable()
            .map(|p| p.tensor.data().iter().filter(|&&v| v == 0.0).count())
            .sum()
    }

    /// Fraction of prunable coordinates that are exactly zero.
    pub fn sparsity(&self) -> f64 {
        let n = self.prunable_count();
        if n == 0 {
            0.0
        } else {
            self.zero_count() as f64 / n as f64
        }
    }

    /// Zeroes every masked coordinate.
    pub fn apply_masks(&mut self) {
        for p in self.entries.iter_mut() {
            for (v, &keep) in p.tensor.data_mut().iter_mut().zip(&p.mask) {
                if !keep {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.len()).sum()
    }
}

impl<'a> IntoIterator for &'a ParamStore {
    type Item = &'a Param;
    type IntoIter = std::slice::Iter<'a, Param>;
    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}
