use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub pos: Vec<f64>,
    pub deg: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChargeSet {
    pub charges: Vec<Charge>,
}

impl ChargeSet {
    pub fn new(charges: Vec<Charge>) -> Result<Self> {
        let s = ChargeSet { charges };
        s.validate()?;
        Ok(s)
    }

    pub fn single(pos: &[f64], deg: i64) -> Self {
        ChargeSet { charges: vec![Charge { pos: pos.to_vec(), deg }] }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.charges.first().map(|c| c.pos.len());
        for (i, c) in self.charges.iter().enumerate() {
            if Some(c.pos.len()) != dim {
                return Err(Error::InvalidArgument(format!("charge {i}: inconsistent dimension")));
            }
            if c.deg == 0 {
                return Err(Error::InvalidArgument(format!("charge {i}: zero degree")));
            }
            if c.pos.iter().any(|x| !x.is_finite() || x.abs() >= 0.5) {
                return Err(Error::InvalidArgument(format!("charge {i}: position outside Q_1(0)")));
            }
            for (j, d) in self.charges[..i].iter().enumerate() {
                if d.pos == c.pos {
                    return Err(Error::InvalidArgument(format!("charges {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn total_degree(&self) -> i64 {
        self.charges.iter().map(|c| c.deg).sum()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ChargeSet = serde_json::from_str(text).map_err(|e| Error::Format {
            offset: byte_offset(text, e.line(), e.column()),
            msg: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("charge set serializes")
    }
}

pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut off = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return off + column.saturating_sub(1);
        }
        off += l.len();
    }
    off
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip() {
        let s = ChargeSet::new(vec![
            Charge { pos: vec![0.1, -0.2], deg: 2 },
            Charge { pos: vec![0.0, 0.3], deg: -1 },
        ])
        .unwrap();
        let text = s.to_json();
        assert!(text.contains("\"deg\""));
        assert_eq!(ChargeSet::from_json(&text).unwrap(), s);
    }

    #[test]
    fn invalid_sets() {
        assert!(ChargeSet::new(vec![Charge { pos: vec![0.5, 0.0], deg: 1 }]).is_err());
        assert!(ChargeSet::new(vec![Charge { pos: vec![0.1, 0.0], deg: 0 }]).is_err());
        let p = Charge { pos: vec![0.1, 0.1], deg: 1 };
        assert!(ChargeSet::new(vec![p.clone(), p]).is_err());
        let e = ChargeSet::from_json("[{\"pos\": [0.1, 0.2], \"deg\": x}]").unwrap_err();
        assert!(matches!(e, Error::Format { offset, .. } if offset > 10));
    }
}
