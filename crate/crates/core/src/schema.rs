//! Attributes, attribute combinations, cuboids and measure definitions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered attribute names plus the distinct values observed for each.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSchema {
    attributes: Vec<String>,
    domains: Vec<Vec<String>>,
    lookup: Vec<HashMap<String, u32>>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<String>, domains: Vec<Vec<String>>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("at least one attribute is required".into()));
        }
        if attributes.len() != domains.len() {
            return Err(Error::Schema("one domain per attribute is required".into()));
        }
        let mut seen = HashMap::new();
        for (i, a) in attributes.iter().enumerate() {
            if seen.insert(a.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate attribute `{a}`")));
            }
        }
        let mut lookup = Vec::with_capacity(domains.len());
        for (a, dom) in attributes.iter().zip(&domains) {
            if dom.is_empty() {
                return Err(Error::Schema(format!("attribute `{a}` has an empty domain")));
            }
            let mut map = HashMap::with_capacity(dom.len());
            for (code, v) in dom.iter().enumerate() {
                if map.insert(v.clone(), code as u32).is_some() {
                    return Err(Error::Schema(format!("duplicate value `{v}` in `{a}`")));
                }
            }
            lookup.push(map);
        }
        Ok(Self { attributes, domains, lookup })
    }

    /// Number of attributes.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn domain(&self, attr: usize) -> &[String] {
        &self.domains[attr]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn value_code(&self, attr: usize, value: &str) -> Option<u32> {
        self.lookup[attr].get(value).copied()
    }

    pub fn value_name(&self, attr: usize, code: u32) -> &str {
        &self.domains[attr][code as usize]
    }

    pub(crate) fn decode(&self, attrs: &[usize], codes: &[u32]) -> AttributeCombination {
        AttributeCombination::from_pairs(
            attrs
                .iter()
                .zip(codes)
                .map(|(&a, &c)| (self.attributes[a].clone(), self.value_name(a, c).to_string())),
        )
    }
}

/// A partial assignment of values to attributes. The empty combination is the root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeCombination {
    bindings: BTreeMap<String, String>,
}

impl AttributeCombination {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            bindings: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn with(mut self, attr: impl Into<String>, value: impl Into<String>) -> Self {
        self.bindings.insert(attr.into(), value.into());
        self
    }

    pub fn get(&self, attr: &str) -> Option<&str> {
        self.bindings.get(attr).map(String::as_str)
    }

    /// Number of bound attributes.
    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(String::as_str)
    }

    /// True when every binding of `other` is also present here.
    pub fn is_descendant_of(&self, other: &AttributeCombination) -> bool {
        other.iter().all(|(a, v)| self.get(a) == Some(v))
    }

    /// Drop the bindings of the given attributes.
    pub fn without<'a>(&self, attrs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut out = self.clone();
        for a in attrs {
            out.bindings.remove(a);
        }
        out
    }
}

impl fmt::Display for AttributeCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.bindings.is_empty() {
            return f.write_str("*");
        }
        let mut first = true;
        for (a, v) in &self.bindings {
            if !first {
                f.write_str("&")?;
            }
            write!(f, "{a}={v}")?;
            first = false;
        }
        Ok(())
    }
}

/// Wire form of a single binding: `{"attr": "...", "value": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub attr: String,
    pub value: String,
}

impl Serialize for AttributeCombination {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Binding> = self
            .iter()
            .map(|(a, v)| Binding { attr: a.into(), value: v.into() })
            .collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AttributeCombination {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<Binding>::deserialize(d)?;
        let n = v.len();
        let combo = Self::from_pairs(v.into_iter().map(|b| (b.attr, b.value)));
        if combo.len() != n {
            return Err(serde::de::Error::custom("attribute bound more than once"));
        }
        Ok(combo)
    }
}

/// A set of attributes; its layer is the number of attributes.
///
/// Attribute indices are kept sorted by attribute name so that enumeration
/// order is lexicographic and deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cuboid {
    attrs: Vec<usize>,
    names: Vec<String>,
}

impl Cuboid {
    pub fn from_names(schema: &AttributeSchema, names: &[&str]) -> Result<Self> {
        let mut attrs = names
            .iter()
            .map(|n| {
                schema
                    .attribute_index(n)
                    .ok_or_else(|| Error::UnknownAttribute(n.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        attrs.sort_by(|&a, &b| schema.attributes()[a].cmp(&schema.attributes()[b]));
        attrs.dedup();
        if attrs.is_empty() {
            return Err(Error::InvalidArgument("a cuboid needs at least one attribute".into()));
        }
        Ok(Self::from_indices(schema, attrs))
    }

    pub(crate) fn from_indices(schema: &AttributeSchema, attrs: Vec<usize>) -> Self {
        let names = attrs.iter().map(|&a| schema.attributes()[a].clone()).collect();
        Self { attrs, names }
    }

    pub fn layer(&self) -> usize {
        self.attrs.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub(crate) fn indices(&self) -> &[usize] {
        &self.attrs
    }
}

impl fmt::Display for Cuboid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names.join("&"))
    }
}

/// All non-empty attribute subsets ordered by layer, lexicographic by name within a layer.
pub fn cuboids_by_layer(schema: &AttributeSchema) -> Vec<Cuboid> {
    let n = schema.len();
    let mut by_name: Vec<usize> = (0..n).collect();
    by_name.sort_by(|&a, &b| schema.attributes()[a].cmp(&schema.attributes()[b]));
    let mut out = Vec::with_capacity((1usize << n) - 1);
    for layer in 1..=n {
        let mut subset: Vec<usize> = (0..layer).collect();
        loop {
            let attrs = subset.iter().map(|&i| by_name[i]).collect();
            out.push(Cuboid::from_indices(schema, attrs));
            // next k-combination in lexicographic order
            let mut i = layer;
            while i > 0 && subset[i - 1] == n - layer + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            subset[i - 1] += 1;
            for j in i..layer {
                subset[j] = subset[j - 1] + 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Fundamental,
    Quotient,
    Product,
}

/// Noise model used for per-leaf deviation-score distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistributionFamily {
    Poisson,
    None,
}

/// Which fundamental columns a measure reads and how it combines them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub operands: Vec<String>,
    pub family: DistributionFamily,
}

/// Column name used when a CSV carries bare `real`/`predict` columns.
pub const DEFAULT_COLUMN: &str = "value";

impl MeasureSpec {
    pub fn fundamental(column: impl Into<String>) -> Self {
        Self {
            kind: MeasureKind::Fundamental,
            operands: vec![column.into()],
            family: DistributionFamily::None,
        }
    }

    pub fn quotient(numerator: impl Into<String>, denominator: impl Into<String>) -> Self {
        Self {
            kind: MeasureKind::Quotient,
            operands: vec![numerator.into(), denominator.into()],
            family: DistributionFamily::None,
        }
    }

    pub fn product(a: impl Into<String>, b: impl Into<String>) -> Self {
        Self {
            kind: MeasureKind::Product,
            operands: vec![a.into(), b.into()],
            family: DistributionFamily::None,
        }
    }

    pub fn with_family(mut self, family: DistributionFamily) -> Self {
        self.family = family;
        self
    }

    pub fn is_derived(&self) -> bool {
        self.kind != MeasureKind::Fundamental
    }

    /// Structural checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            MeasureKind::Fundamental => 1,
            MeasureKind::Quotient | MeasureKind::Product => 2,
        };
        if self.operands.len() != want {
            return Err(Error::Measure(format!(
                "{:?} measure takes {want} operand(s), got {}",
                self.kind,
                self.operands.len()
            )));
        }
        if self.is_derived() && self.family == DistributionFamily::Poisson {
            return Err(Error::Measure(
                "derived measures cannot use a Poisson distribution family".into(),
            ));
        }
        Ok(())
    }

    /// Parse the CLI form: `col`, `col:poisson`, `num/den`, `a*b`.
    pub fn parse(text: &str) -> Result<Self> {
        let (body, family) = match text.rsplit_once(':') {
            Some((b, "poisson")) => (b, DistributionFamily::Poisson),
            Some((b, "none")) => (b, DistributionFamily::None),
            Some((_, other)) => {
                return Err(Error::Measure(format!("unknown distribution family `{other}`")))
            }
            None => (text, DistributionFamily::None),
        };
        let spec = if let Some((a, b)) = body.split_once('/') {
            Self::quotient(a.trim(), b.trim())
        } else if let Some((a, b)) = body.split_once('*') {
            Self::product(a.trim(), b.trim())
        } else {
            Self::fundamental(body.trim())
        };
        let spec = spec.with_family(family);
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for MeasureSpec {
    fn default() -> Self {
        Self::fundamental(DEFAULT_COLUMN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(names: &[&str]) -> AttributeSchema {
        AttributeSchema::new(
            names.iter().map(|s| s.to_string()).collect(),
            names.iter().map(|_| vec!["x".to_string()]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cuboid_counts() {
        let c = cuboids_by_layer(&schema(&["UA", "ISP", "Province"]));
        assert_eq!(c.len(), 7);
        let layers: Vec<usize> = c.iter().map(Cuboid::layer).collect();
        assert_eq!(layers, vec![1, 1, 1, 2, 2, 2, 3]);
        assert_eq!(c[0].names(), ["ISP"]);
        assert_eq!(c[3].names(), ["ISP", "Province"]);
        assert_eq!(c[5].names(), ["Province", "UA"]);

        assert_eq!(cuboids_by_layer(&schema(&["a"])).len(), 1);

        let four = cuboids_by_layer(&schema(&["a", "b", "c", "d"]));
        let mut sizes = [0usize; 5];
        for c in &four {
            sizes[c.layer()] += 1;
        }
        assert_eq!(four.len(), 15);
        assert_eq!(&sizes[1..], &[4, 6, 4, 1]);
    }

    #[test]
    fn schema_rejects_duplicates_and_empty() {
        assert!(AttributeSchema::new(vec![], vec![]).is_err());
        assert!(AttributeSchema::new(
            vec!["a".into(), "a".into()],
            vec![vec!["x".into()], vec!["y".into()]]
        )
        .is_err());
        assert!(AttributeSchema::new(vec!["a".into()], vec![vec![]]).is_err());
    }

    #[test]
    fn measure_parse() {
        assert_eq!(MeasureSpec::parse("value").unwrap(), MeasureSpec::fundamental("value"));
        assert_eq!(
            MeasureSpec::parse("orders:poisson").unwrap().family,
            DistributionFamily::Poisson
        );
        assert_eq!(MeasureSpec::parse("succ/total").unwrap().kind, MeasureKind::Quotient);
        assert_eq!(MeasureSpec::parse("a*b").unwrap().kind, MeasureKind::Product);
        assert!(MeasureSpec::parse("succ/total:poisson").is_err());
        assert!(MeasureSpec::parse("x:gauss").is_err());
    }

    #[test]
    fn combination_json_shape() {
        let c = AttributeCombination::root().with("Province", "Beijing");
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"[{"attr":"Province","value":"Beijing"}]"#);
        let back: AttributeCombination = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<AttributeCombination>(
            r#"[{"attr":"a","value":"1"},{"attr":"a","value":"2"}]"#
        )
        .is_err());
    }

    #[test]
    fn descendance() {
        let p = AttributeCombination::root().with("a", "1");
        let c = p.clone().with("b", "2");
        assert!(c.is_descendant_of(&p));
        assert!(!p.is_descendant_of(&c));
        assert!(p.is_descendant_of(&AttributeCombination::root()));
        assert_eq!(c.to_string(), "a=1&b=2");
    }
}
