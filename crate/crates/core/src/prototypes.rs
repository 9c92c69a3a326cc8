//! Per-class representation centroids uploaded by clients, and the server's
//! running global prototypes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{ModelError, ModelParams};
use crate::numerics::{self, argmax};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub proto: Vec<f64>,
    pub count: usize,
}

/// One client's upload for one round. Classes the client does not hold are
/// `None`; they are never zero-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    pub client: usize,
    pub round: usize,
    pub protos: Vec<Option<ClassPrototype>>,
}

#[derive(Serialize, Deserialize)]
struct WirePrototypeSet {
    client: usize,
    round: usize,
    num_classes: usize,
    protos: BTreeMap<String, ClassPrototype>,
}

impl PrototypeSet {
    pub fn num_classes(&self) -> usize {
        self.protos.len()
    }

    pub fn get(&self, class: usize) -> Option<&ClassPrototype> {
        self.protos.get(class).and_then(|p| p.as_ref())
    }

    pub fn present_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.protos.iter().enumerate().filter_map(|(c, p)| p.as_ref().map(|_| c))
    }

    /// Upload message: `{"client", "round", "num_classes", "protos": {"<class>": {"proto": [...], "count": n}}}`.
    pub fn to_wire_json(&self) -> String {
        let wire = WirePrototypeSet {
            client: self.client,
            round: self.round,
            num_classes: self.protos.len(),
            protos: self
                .protos
                .iter()
                .enumerate()
                .filter_map(|(c, p)| p.clone().map(|p| (c.to_string(), p)))
                .collect(),
        };
        serde_json::to_string(&wire).expect("prototype set serializes")
    }

    pub fn from_wire_json(s: &str) -> Result<Self, String> {
        let wire: WirePrototypeSet = serde_json::from_str(s).map_err(|e| e.to_string())?;
        let mut protos = vec![None; wire.num_classes];
        for (key, p) in wire.protos {
            let c: usize = key.parse().map_err(|_| format!("class key {key:?} is not an index"))?;
            if c >= wire.num_classes {
                return Err(format!("class {c} out of range"));
            }
            if p.count == 0 {
                return Err(format!("class {c} has count 0"));
            }
            numerics::check_finite(&p.proto).map_err(|e| e.to_string())?;
            protos[c] = Some(p);
        }
        Ok(Self { client: wire.client, round: wire.round, protos })
    }
}

/// Mean representation per label under `params`. With `correct_only`, only
/// samples the model classifies correctly enter the mean.
pub fn compute_prototypes(
    params: &ModelParams,
    data: &Dataset,
    client: usize,
    round: usize,
    correct_only: bool,
) -> Result<PrototypeSet, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Empty);
    }
    let classes = params.config().num_classes;
    let dim = params.config().repr_dim;
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for i in 0..data.len() {
        let y = data.label(i);
        if y >= classes {
            return Err(ModelError::LabelOutOfRange { label: y, classes });
        }
        let (z, logits) = params.forward(data.features(i))?;
        if correct_only && argmax(&logits) != y {
            continue;
        }
        numerics::axpy(&mut sums[y], 1.0, &z);
        counts[y] += 1;
    }
    let protos = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| {
            (n > 0).then(|| ClassPrototype {
                proto: s.into_iter().map(|v| v / n as f64).collect(),
                count: n,
            })
        })
        .collect();
    Ok(PrototypeSet { client, round, protos })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPrototype {
    pub vector: Vec<f64>,
    pub updated_round: usize,
}

/// Latest global prototype per class; `None` until a class is first seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalPrototypes {
    pub classes: Vec<Option<GlobalPrototype>>,
}

impl GlobalPrototypes {
    pub fn new(num_classes: usize) -> Self {
        Self { classes: vec![None; num_classes] }
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.classes[class].as_ref().map(|g| g.vector.as_slice())
    }

    pub fn set(&mut self, class: usize, vector: Vec<f64>, round: usize) {
        self.classes[class] = Some(GlobalPrototype { vector, updated_round: round });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    /// Identity encoder on 2-d inputs with two classes.
    fn identity_model() -> ModelParams {
        let cfg = ModelConfig { input_dim: 2, hidden_dims: vec![], repr_dim: 2, num_classes: 2 };
        // encoder W = I, b = 0; classifier W = I, b = 0
        ModelParams::from_values(cfg, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn mean_of_two() {
        let ds = Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1], 2).unwrap();
        let p = compute_prototypes(&identity_model(), &ds, 0, 0, false).unwrap();
        assert!(p.get(0).is_none());
        assert_eq!(p.get(1).unwrap().proto, vec![0.5, 0.5]);
        assert_eq!(p.get(1).unwrap().count, 2);
    }

    #[test]
    fn singleton_and_permutation() {
        let ds = Dataset::new(
            vec![vec![3.0, -1.0], vec![1.0, 2.0], vec![0.5, 0.25]],
            vec![0, 1, 1],
            2,
        )
        .unwrap();
        let m = identity_model();
        let p = compute_prototypes(&m, &ds, 4, 2, false).unwrap();
        assert_eq!(p.get(0).unwrap().proto, vec![3.0, -1.0]);
        let shuffled = ds.subset(&[2, 0, 1]);
        let q = compute_prototypes(&m, &shuffled, 4, 2, false).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn correct_only_drops_misclassified() {
        // (1,0) labelled 1 is classified as 0 by the identity head.
        let ds = Dataset::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1, 1], 2).unwrap();
        let p = compute_prototypes(&identity_model(), &ds, 0, 0, true).unwrap();
        assert_eq!(p.get(1).unwrap().proto, vec![0.0, 1.0]);
        assert_eq!(p.get(1).unwrap().count, 1);
    }

    #[test]
    fn wire_round_trip() {
        let set = PrototypeSet {
            client: 3,
            round: 7,
            protos: vec![None, Some(ClassPrototype { proto: vec![0.1, 1.0 / 3.0], count: 5 }), None],
        };
        let json = set.to_wire_json();
        assert!(json.contains("\"client\":3"));
        assert_eq!(PrototypeSet::from_wire_json(&json).unwrap(), set);
        assert!(PrototypeSet::from_wire_json(r#"{"client":0,"round":0,"num_classes":1,"protos":{"4":{"proto":[1.0],"count":1}}}"#).is_err());
    }
}
