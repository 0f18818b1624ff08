use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
}

/// Flat parameter vector with named, contiguous segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    /// Builds a zeroed vector from `(name, len)` segments laid out in order.
    pub fn zeros(segments: &[(&str, usize)]) -> Self {
        let mut layout = Vec::with_capacity(segments.len());
        let mut offset = 0;
        for &(name, len) in segments {
            layout.push(Segment {
                name: name.to_string(),
                range: offset..offset + len,
            });
            offset += len;
        }
        ParamVector {
            values: vec![0.0; offset],
            layout,
        }
    }

    /// Single unnamed segment covering `values`.
    pub fn flat(values: Vec<f64>) -> Self {
        let n = values.len();
        ParamVector {
            values,
            layout: vec![Segment {
                name: "theta".into(),
                range: 0..n,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("no parameter segment named `{name}`"))
            .range
            .clone()
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        &self.values[self.range(name)]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.range(name);
        &mut self.values[r]
    }

    /// Segments are disjoint, ordered and cover the vector exactly.
    pub fn layout_is_consistent(&self) -> bool {
        let mut end = 0;
        for s in &self.layout {
            if s.range.start != end || s.range.end < s.range.start {
                return false;
            }
            end = s.range.end;
        }
        end == self.values.len()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }
}
