use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerKind, Network};

/// Relevance redistribution rule for one parametrized layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrpRule {
    /// Uniform redistribution over each output unit's receptive field.
    Flat,
    /// Proportional to `x_i w_ij`, stabilized by `ε·sign(z_j)` with sign(0)=+1.
    Epsilon { epsilon: f32 },
    /// Only positive contributions `max(0, x_i w_ij)` receive relevance.
    ZPlus,
    /// Proportional to `x_i (w_ij + γ w_ij⁺)`.
    Gamma { gamma: f32 },
    /// Bounded-input rule for the first layer. Bounds are per input channel
    /// (a single value broadcasts to every channel).
    Box { low: Vec<f32>, high: Vec<f32> },
}

impl LrpRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            LrpRule::Epsilon { epsilon } if !(*epsilon > 0.0) => Err(Error::Config(format!(
                "epsilon rule needs ε > 0, got {epsilon}"
            ))),
            LrpRule::Gamma { gamma } if !(*gamma >= 0.0) => Err(Error::Config(format!(
                "gamma rule needs γ >= 0, got {gamma}"
            ))),
            LrpRule::Box { low, high } => {
                if low.len() != high.len() || low.is_empty() {
                    return Err(Error::Config("box bounds must be equally long and non-empty".into()));
                }
                if low.iter().zip(high).any(|(l, h)| !(l <= h)) {
                    return Err(Error::Config("box rule needs low <= high".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Augmentation,
    Visualization,
    Evaluation,
}

/// Assignment of rules to the parametrized layers of a network.
///
/// Resolution order for a layer: explicit override by layer index, then the
/// first-layer rule (for the first parametrized layer), then the rule for its
/// family (convolutional: `Conv2d`/`SharedPointMlp`; dense: `Linear`), then
/// the default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Composite {
    pub purpose: Purpose,
    pub first: Option<LrpRule>,
    pub conv: Option<LrpRule>,
    pub dense: Option<LrpRule>,
    pub default: Option<LrpRule>,
    pub overrides: BTreeMap<usize, LrpRule>,
}

impl Default for Composite {
    fn default() -> Self {
        Composite::augmentation_epsilon(1e-6)
    }
}

impl Composite {
    fn empty(purpose: Purpose) -> Self {
        Composite {
            purpose,
            first: None,
            conv: None,
            dense: None,
            default: None,
            overrides: BTreeMap::new(),
        }
    }

    /// Flat on the first layer, ε everywhere else.
    pub fn augmentation_epsilon(epsilon: f32) -> Self {
        Composite {
            first: Some(LrpRule::Flat),
            default: Some(LrpRule::Epsilon { epsilon }),
            ..Self::empty(Purpose::Augmentation)
        }
    }

    /// Flat on the first layer, z⁺ everywhere else.
    pub fn augmentation_zplus() -> Self {
        Composite {
            first: Some(LrpRule::Flat),
            default: Some(LrpRule::ZPlus),
            ..Self::empty(Purpose::Augmentation)
        }
    }

    /// The z⁺ composite used for rank accuracy and flipping curves.
    pub fn evaluation() -> Self {
        Composite {
            purpose: Purpose::Evaluation,
            ..Self::augmentation_zplus()
        }
    }

    /// Box on the first layer, γ=0.25 on convolutions, ε on dense layers.
    pub fn visualization(low: Vec<f32>, high: Vec<f32>, epsilon: f32) -> Self {
        Composite {
            first: Some(LrpRule::Box { low, high }),
            conv: Some(LrpRule::Gamma { gamma: 0.25 }),
            dense: Some(LrpRule::Epsilon { epsilon }),
            ..Self::empty(Purpose::Visualization)
        }
    }

    /// γ=0.25 on convolutions and ε on dense layers, without a first-layer rule.
    pub fn intermediate(epsilon: f32) -> Self {
        Composite {
            conv: Some(LrpRule::Gamma { gamma: 0.25 }),
            dense: Some(LrpRule::Epsilon { epsilon }),
            ..Self::empty(Purpose::Evaluation)
        }
    }

    /// Same composite with every ε-rule set to `epsilon`.
    pub fn with_epsilon(mut self, epsilon: f32) -> Self {
        let patch = |r: &mut Option<LrpRule>| {
            if let Some(LrpRule::Epsilon { epsilon: e }) = r {
                *e = epsilon;
            }
        };
        patch(&mut self.first);
        patch(&mut self.conv);
        patch(&mut self.dense);
        patch(&mut self.default);
        for r in self.overrides.values_mut() {
            if let LrpRule::Epsilon { epsilon: e } = r {
                *e = epsilon;
            }
        }
        self
    }

    /// One resolved rule per layer (`None` for layers without weights).
    pub fn resolve(&self, net: &Network) -> Result<Vec<Option<LrpRule>>> {
        let first_param = net.layers().iter().position(|l| l.kind().is_parametrized());
        net.layers()
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let kind = layer.kind();
                if !kind.is_parametrized() {
                    return Ok(None);
                }
                let family = match kind {
                    LayerKind::Linear => &self.dense,
                    _ => &self.conv,
                };
                let rule = self
                    .overrides
                    .get(&i)
                    .or(if Some(i) == first_param {
                        self.first.as_ref()
                    } else {
                        None
                    })
                    .or(family.as_ref())
                    .or(self.default.as_ref())
                    .ok_or(Error::MissingRule(i))?;
                rule.validate()?;
                Ok(Some(rule.clone()))
            })
            .collect()
    }
}
