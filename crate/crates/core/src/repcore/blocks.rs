use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block-group layout of a residual backbone: consecutive blocks that share a
/// feature width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockGroupSpec {
    groups: Vec<(String, usize)>,
}

impl BlockGroupSpec {
    pub fn new(groups: Vec<(String, usize)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::precondition("block-group spec needs at least one group"));
        }
        if let Some((name, _)) = groups.iter().find(|(_, n)| *n == 0) {
            return Err(Error::precondition(format!("block group {name} has no blocks")));
        }
        Ok(BlockGroupSpec { groups })
    }

    /// Bottleneck multiplicities of a ResNet-50: 3, 4, 6 and 3 blocks.
    pub fn resnet50() -> Self {
        BlockGroupSpec {
            groups: vec![
                ("BG1".into(), 3),
                ("BG2".into(), 4),
                ("BG3".into(), 6),
                ("BG4".into(), 3),
            ],
        }
    }

    /// Groups named `BG1..` from a list of block counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        Self::new(
            counts
                .iter()
                .enumerate()
                .map(|(i, &n)| (format!("BG{}", i + 1), n))
                .collect(),
        )
    }

    pub fn groups(&self) -> &[(String, usize)] {
        &self.groups
    }

    pub fn total_blocks(&self) -> usize {
        self.groups.iter().map(|(_, n)| n).sum()
    }

    /// 1-based block group containing 1-based `block`.
    pub fn group_of_block(&self, block: usize) -> Option<usize> {
        if block == 0 {
            return None;
        }
        let mut end = 0;
        for (g, (_, n)) in self.groups.iter().enumerate() {
            end += n;
            if block <= end {
                return Some(g + 1);
            }
        }
        None
    }

    /// Block group of a backbone layer index (odd or even numbering).
    pub fn group_of_layer(&self, layer_index: usize) -> Option<usize> {
        self.group_of_block(layer_index.div_ceil(2))
    }

    pub fn odd_layer_indices(&self) -> Vec<usize> {
        (1..=self.total_blocks()).map(|b| 2 * b - 1).collect()
    }

    pub fn even_layer_indices(&self) -> Vec<usize> {
        (1..=self.total_blocks()).map(|b| 2 * b).collect()
    }

    /// First block of each group (1-based); layers there enter a new group.
    pub fn group_entry_blocks(&self) -> Vec<usize> {
        let mut start = 1;
        self.groups
            .iter()
            .map(|(_, n)| {
                let s = start;
                start += n;
                s
            })
            .collect()
    }

    pub fn is_group_entry_layer(&self, layer_index: usize) -> bool {
        self.group_entry_blocks().contains(&layer_index.div_ceil(2))
    }
}
