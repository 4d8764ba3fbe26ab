use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Supervised,
    Contrastive,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Supervised => "supervised",
            Method::Contrastive => "contrastive",
        })
    }
}

/// Where in the network a representation was tapped.
///
/// Backbone layers are numbered by depth: block `i` (1-based) contributes the
/// residual-branch output as layer `2i - 1` (odd) and the post-residual
/// activation as layer `2i` (even). Head layers continue the numbering after
/// the last block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Input,
    Odd,
    Even,
    Head,
    Class,
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Parity::Input => "input",
            Parity::Odd => "odd",
            Parity::Even => "even",
            Parity::Head => "head",
            Parity::Class => "class",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerTag {
    pub model_id: String,
    pub method: Method,
    pub seed: u64,
    pub layer_index: usize,
    pub parity: Parity,
    pub block_group: Option<usize>,
}

impl LayerTag {
    pub fn new(
        model_id: impl Into<String>,
        method: Method,
        seed: u64,
        layer_index: usize,
        parity: Parity,
    ) -> Self {
        LayerTag {
            model_id: model_id.into(),
            method,
            seed,
            layer_index,
            parity,
            block_group: None,
        }
    }

    pub fn with_block_group(mut self, block_group: Option<usize>) -> Self {
        self.block_group = block_group;
        self
    }

    /// Tag for a matrix that is not a network layer (tests, ad-hoc inputs).
    pub fn anonymous(name: impl Into<String>) -> Self {
        LayerTag::new(name, Method::Supervised, 0, 1, Parity::Input)
    }

    /// The key that must be unique within a run.
    pub fn key(&self) -> (&str, usize, Parity) {
        (&self.model_id, self.layer_index, self.parity)
    }

    /// Checks the odd/even numbering convention.
    pub fn validate(&self) -> Result<()> {
        if self.layer_index == 0 {
            return Err(Error::precondition(format!("{self}: layer_index is 1-based")));
        }
        let odd_index = self.layer_index % 2 == 1;
        match self.parity {
            Parity::Odd if !odd_index => Err(Error::precondition(format!(
                "{self}: residual (odd) layers carry odd layer indices"
            ))),
            Parity::Even if odd_index => Err(Error::precondition(format!(
                "{self}: post-residual (even) layers carry even layer indices"
            ))),
            _ => Ok(()),
        }
    }

    /// Same position in the network, ignoring which model it came from.
    pub fn same_layer(&self, other: &LayerTag) -> bool {
        self.layer_index == other.layer_index && self.parity == other.parity
    }

    /// Short label for plot axes and CSV headers, e.g. `even12` or `head33`.
    pub fn short_label(&self) -> String {
        format!("{}{}", self.parity, self.layer_index)
    }
}

impl fmt::Display for LayerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}", self.model_id, self.parity, self.layer_index)?;
        if let Some(bg) = self.block_group {
            write!(f, "[BG{bg}]")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parity_numbering_is_enforced() {
        let ok = LayerTag::new("m", Method::Supervised, 0, 3, Parity::Odd);
        assert!(ok.validate().is_ok());
        let bad = LayerTag::new("m", Method::Supervised, 0, 4, Parity::Odd);
        assert!(bad.validate().is_err());
        let bad = LayerTag::new("m", Method::Supervised, 0, 3, Parity::Even);
        assert!(bad.validate().is_err());
        let zero = LayerTag::new("m", Method::Supervised, 0, 0, Parity::Head);
        assert!(zero.validate().is_err());
    }

    #[test]
    fn serde_names() {
        let tag = LayerTag::new("contrastive-s0", Method::Contrastive, 0, 2, Parity::Even)
            .with_block_group(Some(1));
        let json = serde_json::to_string(&tag).unwrap();
        assert!(json.contains("\"contrastive\""));
        assert!(json.contains("\"even\""));
        assert_eq!(tag.to_string(), "contrastive-s0:even2[BG1]");
    }
}
