//! Leaf-level snapshot storage, CSV ingestion and descended-leaf lookup.

use std::collections::HashMap;

use fixedbitset::FixedBitSet;

use crate::error::{Error, Result};
use crate::gre;
use crate::schema::{
    AttributeCombination, AttributeSchema, Cuboid, DistributionFamily, MeasureSpec,
    DEFAULT_COLUMN,
};

/// One leaf as supplied by a caller: a full binding plus per-column values.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRow {
    /// Attribute values, in schema attribute order.
    pub values: Vec<String>,
    pub real: Vec<f64>,
    pub forecast: Vec<f64>,
}

/// All leaf attribute combinations at one time point.
///
/// Immutable once built. Rows are stored column-wise; every attribute value
/// also owns a bitset of the rows carrying it so that descended-leaf lookups
/// are bitset intersections.
#[derive(Debug, Clone)]
pub struct Snapshot {
    schema: AttributeSchema,
    measure: MeasureSpec,
    columns: Vec<String>,
    /// `codes[attr][row]`
    codes: Vec<Vec<u32>>,
    /// `real[column][row]`
    real: Vec<Vec<f64>>,
    forecast: Vec<Vec<f64>>,
    /// `index[attr][value]` = rows bound to that value
    index: Vec<Vec<FixedBitSet>>,
    operand_cols: Vec<usize>,
    leaf_v: Vec<f64>,
    leaf_f: Vec<f64>,
}

/// Leaves of one cuboid grouped by their projection onto the cuboid.
#[derive(Debug, Clone)]
pub struct CuboidGroups {
    pub cuboid: Cuboid,
    /// Groups sorted lexicographically by value names.
    pub groups: Vec<LeafGroup>,
    /// Group index of every leaf.
    pub leaf_group: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct LeafGroup {
    /// Value codes aligned with `cuboid.indices()`.
    pub codes: Vec<u32>,
    pub leaves: Vec<u32>,
}

impl Snapshot {
    /// Build a snapshot from rows. Domains are the distinct values in first-seen order.
    pub fn from_rows(
        attributes: Vec<String>,
        columns: Vec<String>,
        rows: Vec<LeafRow>,
        measure: MeasureSpec,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoLeaves);
        }
        let n = attributes.len();
        let mut domains: Vec<Vec<String>> = vec![Vec::new(); n];
        let mut seen: Vec<HashMap<String, u32>> = vec![HashMap::new(); n];
        let mut codes: Vec<Vec<u32>> = vec![Vec::with_capacity(rows.len()); n];
        let mut real = vec![Vec::with_capacity(rows.len()); columns.len()];
        let mut forecast = vec![Vec::with_capacity(rows.len()); columns.len()];
        for (r, row) in rows.into_iter().enumerate() {
            if row.values.len() != n {
                return Err(Error::Parse {
                    row: r + 1,
                    msg: format!("expected {n} attribute values, got {}", row.values.len()),
                });
            }
            if row.real.len() != columns.len() || row.forecast.len() != columns.len() {
                return Err(Error::Parse { row: r + 1, msg: "wrong number of value columns".into() });
            }
            for (a, value) in row.values.into_iter().enumerate() {
                let next = domains[a].len() as u32;
                let code = *seen[a].entry(value.clone()).or_insert_with(|| {
                    domains[a].push(value);
                    next
                });
                codes[a].push(code);
            }
            for (c, (&v, &f)) in row.real.iter().zip(&row.forecast).enumerate() {
                check_value(v, r + 1)?;
                check_value(f, r + 1)?;
                real[c].push(v);
                forecast[c].push(f);
            }
        }
        let schema = AttributeSchema::new(attributes, domains)?;
        Self::from_parts(schema, columns, codes, real, forecast, measure)
    }

    fn from_parts(
        schema: AttributeSchema,
        columns: Vec<String>,
        codes: Vec<Vec<u32>>,
        real: Vec<Vec<f64>>,
        forecast: Vec<Vec<f64>>,
        measure: MeasureSpec,
    ) -> Result<Self> {
        let rows = codes.first().map_or(0, Vec::len);
        if rows == 0 {
            return Err(Error::NoLeaves);
        }
        // leaf uniqueness
        let mut keys: HashMap<Vec<u32>, usize> = HashMap::with_capacity(rows);
        for r in 0..rows {
            let key: Vec<u32> = codes.iter().map(|c| c[r]).collect();
            if keys.insert(key, r).is_some() {
                return Err(Error::Parse { row: r + 1, msg: "duplicate leaf".into() });
            }
        }
        let index = (0..schema.len())
            .map(|a| {
                let mut sets = vec![FixedBitSet::with_capacity(rows); schema.domain(a).len()];
                for (r, &c) in codes[a].iter().enumerate() {
                    sets[c as usize].insert(r);
                }
                sets
            })
            .collect();
        let mut snap = Self {
            schema,
            measure: MeasureSpec::default(),
            columns,
            codes,
            real,
            forecast,
            index,
            operand_cols: Vec::new(),
            leaf_v: Vec::new(),
            leaf_f: Vec::new(),
        };
        snap.set_measure(measure)?;
        Ok(snap)
    }

    fn set_measure(&mut self, measure: MeasureSpec) -> Result<()> {
        measure.validate()?;
        let operand_cols = measure
            .operands
            .iter()
            .map(|o| {
                self.columns
                    .iter()
                    .position(|c| c == o)
                    .ok_or_else(|| Error::MissingColumn(o.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        if measure.family == DistributionFamily::Poisson {
            let col = &self.real[operand_cols[0]];
            if let Some(r) = col.iter().position(|v| v.fract() != 0.0) {
                return Err(Error::Parse {
                    row: r + 1,
                    msg: "Poisson family needs non-negative integer real values".into(),
                });
            }
        }
        let rows = self.codes.first().map_or(0, Vec::len);
        let mut leaf_v = Vec::with_capacity(rows);
        let mut leaf_f = Vec::with_capacity(rows);
        for r in 0..rows {
            let ops = |vals: &Vec<Vec<f64>>| -> (f64, f64) {
                let a = vals[operand_cols[0]][r];
                let b = operand_cols.get(1).map_or(0.0, |&c| vals[c][r]);
                (a, b)
            };
            // a leaf with a zero denominator carries no data; it contributes 0
            leaf_v.push(gre::derived_value(&measure, ops(&self.real)).unwrap_or(0.0));
            leaf_f.push(gre::derived_value(&measure, ops(&self.forecast)).unwrap_or(0.0));
        }
        self.measure = measure;
        self.operand_cols = operand_cols;
        self.leaf_v = leaf_v;
        self.leaf_f = leaf_f;
        Ok(())
    }

    /// Same data, analysed under a different measure.
    pub fn with_measure(&self, measure: MeasureSpec) -> Result<Self> {
        let mut s = self.clone();
        s.set_measure(measure)?;
        Ok(s)
    }

    /// Same leaves with replaced real values (`real[column][row]`).
    pub fn with_real(&self, real: Vec<Vec<f64>>) -> Result<Self> {
        self.with_values(real, self.forecast.clone())
    }

    /// Same leaves with replaced real and forecast values.
    pub fn with_values(&self, real: Vec<Vec<f64>>, forecast: Vec<Vec<f64>>) -> Result<Self> {
        if real.len() != self.columns.len() || forecast.len() != self.columns.len() {
            return Err(Error::InvalidArgument("column count mismatch".into()));
        }
        for col in real.iter().chain(&forecast) {
            if col.len() != self.len() {
                return Err(Error::InvalidArgument("row count mismatch".into()));
            }
            for (r, &v) in col.iter().enumerate() {
                check_value(v, r + 1)?;
            }
        }
        let mut s = self.clone();
        s.real = real;
        s.forecast = forecast;
        let m = s.measure.clone();
        s.set_measure(m)?;
        Ok(s)
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn measure(&self) -> &MeasureSpec {
        &self.measure
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Number of leaves.
    pub fn len(&self) -> usize {
        self.leaf_v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaf_v.is_empty()
    }

    /// Measure-level real value of every leaf (derived measures composed per leaf).
    pub fn leaf_real(&self) -> &[f64] {
        &self.leaf_v
    }

    pub fn leaf_forecast(&self) -> &[f64] {
        &self.leaf_f
    }

    pub fn column_real(&self, col: usize) -> &[f64] {
        &self.real[col]
    }

    pub fn column_forecast(&self, col: usize) -> &[f64] {
        &self.forecast[col]
    }

    /// Full binding of one leaf.
    pub fn leaf(&self, row: usize) -> AttributeCombination {
        AttributeCombination::from_pairs((0..self.schema.len()).map(|a| {
            (
                self.schema.attributes()[a].clone(),
                self.schema.value_name(a, self.codes[a][row]).to_string(),
            )
        }))
    }

    /// Rows descended from `combo`, as a bitset.
    ///
    /// Unknown attributes are an error; a value never observed for a known
    /// attribute simply selects no rows.
    pub fn leaf_set(&self, combo: &AttributeCombination) -> Result<FixedBitSet> {
        let mut set = FixedBitSet::with_capacity(self.len());
        set.insert_range(..);
        for (a, v) in combo.iter() {
            let ai = self
                .schema
                .attribute_index(a)
                .ok_or_else(|| Error::UnknownAttribute(a.to_string()))?;
            match self.schema.value_code(ai, v) {
                Some(code) => set.intersect_with(&self.index[ai][code as usize]),
                None => set.clear(),
            }
        }
        Ok(set)
    }

    /// Sorted indices of the leaves descended from `combo`.
    pub fn leaves_under(&self, combo: &AttributeCombination) -> Result<Vec<usize>> {
        Ok(self.leaf_set(combo)?.ones().collect())
    }

    /// Group all leaves by their projection onto `cuboid`.
    pub fn cuboid_groups(&self, cuboid: &Cuboid) -> CuboidGroups {
        let attrs = cuboid.indices();
        let mut lookup: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut groups: Vec<LeafGroup> = Vec::new();
        let mut leaf_group = Vec::with_capacity(self.len());
        for r in 0..self.len() {
            let key: Vec<u32> = attrs.iter().map(|&a| self.codes[a][r]).collect();
            let g = *lookup.entry(key.clone()).or_insert_with(|| {
                groups.push(LeafGroup { codes: key, leaves: Vec::new() });
                (groups.len() - 1) as u32
            });
            groups[g as usize].leaves.push(r as u32);
            leaf_group.push(g);
        }
        // lexicographic order by value names
        let mut order: Vec<usize> = (0..groups.len()).collect();
        let names = |g: &LeafGroup| -> Vec<&str> {
            attrs
                .iter()
                .zip(&g.codes)
                .map(|(&a, &c)| self.schema.value_name(a, c))
                .collect()
        };
        order.sort_by(|&x, &y| names(&groups[x]).cmp(&names(&groups[y])));
        let mut remap = vec![0u32; groups.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new as u32;
        }
        let mut slots: Vec<Option<LeafGroup>> = groups.into_iter().map(Some).collect();
        let groups = order.iter().map(|&o| slots[o].take().unwrap()).collect();
        for g in &mut leaf_group {
            *g = remap[*g as usize];
        }
        CuboidGroups { cuboid: cuboid.clone(), groups, leaf_group }
    }

    /// Distinct observed projections of the leaves onto `cuboid`.
    pub fn combinations_in_cuboid(&self, cuboid: &Cuboid) -> Vec<AttributeCombination> {
        let cg = self.cuboid_groups(cuboid);
        cg.groups.iter().map(|g| self.schema.decode(cuboid.indices(), &g.codes)).collect()
    }

    /// Decode a group of a cuboid back into a named combination.
    pub fn group_combination(&self, cg: &CuboidGroups, group: usize) -> AttributeCombination {
        self.schema.decode(cg.cuboid.indices(), &cg.groups[group].codes)
    }

    /// Sum each operand column over a row set.
    pub(crate) fn operand_sums<I>(&self, rows: I) -> ([f64; 2], [f64; 2])
    where
        I: IntoIterator<Item = usize>,
    {
        let mut v = [0.0; 2];
        let mut f = [0.0; 2];
        let c0 = self.operand_cols[0];
        let c1 = self.operand_cols.get(1).copied();
        for r in rows {
            v[0] += self.real[c0][r];
            f[0] += self.forecast[c0][r];
            if let Some(c1) = c1 {
                v[1] += self.real[c1][r];
                f[1] += self.forecast[c1][r];
            }
        }
        (v, f)
    }

    /// Compose per-operand sums into measure values.
    pub(crate) fn compose(&self, v: [f64; 2], f: [f64; 2]) -> Result<(f64, f64)> {
        Ok((
            gre::derived_value(&self.measure, (v[0], v[1]))?,
            gre::derived_value(&self.measure, (f[0], f[1]))?,
        ))
    }

    /// Real and forecast value of a set of combinations. Leaves shared by
    /// several members are counted once.
    pub fn aggregate(&self, set: &[AttributeCombination]) -> Result<(f64, f64)> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("aggregate needs a non-empty set".into()));
        }
        let mut union = FixedBitSet::with_capacity(self.len());
        for e in set {
            union.union_with(&self.leaf_set(e)?);
        }
        let (v, f) = self.operand_sums(union.ones());
        self.compose(v, f)
    }

    /// Merge leaves after dropping the given attributes, summing every column.
    pub fn eliminate_attributes(&self, drop: &[&str]) -> Result<Self> {
        let keep: Vec<usize> = (0..self.schema.len())
            .filter(|&a| !drop.contains(&self.schema.attributes()[a].as_str()))
            .collect();
        for d in drop {
            if self.schema.attribute_index(d).is_none() {
                return Err(Error::UnknownAttribute(d.to_string()));
            }
        }
        if keep.is_empty() {
            return Err(Error::Schema("cannot eliminate every attribute".into()));
        }
        let mut slot: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut codes: Vec<Vec<u32>> = vec![Vec::new(); keep.len()];
        let ncol = self.columns.len();
        let mut real = vec![Vec::new(); ncol];
        let mut forecast = vec![Vec::new(); ncol];
        for r in 0..self.len() {
            let key: Vec<u32> = keep.iter().map(|&a| self.codes[a][r]).collect();
            let s = match slot.get(&key) {
                Some(&s) => s,
                None => {
                    let s = real[0].len();
                    for (i, &c) in key.iter().enumerate() {
                        codes[i].push(c);
                    }
                    for c in 0..ncol {
                        real[c].push(0.0);
                        forecast[c].push(0.0);
                    }
                    slot.insert(key, s);
                    s
                }
            };
            for c in 0..ncol {
                real[c][s] += self.real[c][r];
                forecast[c][s] += self.forecast[c][r];
            }
        }
        let attributes = keep.iter().map(|&a| self.schema.attributes()[a].clone()).collect();
        let domains = keep.iter().map(|&a| self.schema.domain(a).to_vec()).collect();
        let schema = AttributeSchema::new(attributes, domains)?;
        Self::from_parts(schema, self.columns.clone(), codes, real, forecast, self.measure.clone())
    }

    /// Serialize in the CSV snapshot format.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let mut header: Vec<String> = self.schema.attributes().to_vec();
        let bare = self.columns.len() == 1 && self.columns[0] == DEFAULT_COLUMN;
        for c in &self.columns {
            if bare {
                header.push("real".into());
                header.push("predict".into());
            } else {
                header.push(format!("real_{c}"));
                header.push(format!("predict_{c}"));
            }
        }
        w.write_record(&header).expect("in-memory write");
        for r in 0..self.len() {
            let mut rec: Vec<String> = (0..self.schema.len())
                .map(|a| self.schema.value_name(a, self.codes[a][r]).to_string())
                .collect();
            for c in 0..self.columns.len() {
                rec.push(fmt_num(self.real[c][r]));
                rec.push(fmt_num(self.forecast[c][r]));
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

fn check_value(v: f64, row: usize) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Parse { row, msg: format!("non-finite value {v}") });
    }
    if v < 0.0 {
        return Err(Error::Parse { row, msg: format!("negative value {v}") });
    }
    Ok(())
}

/// Layout of a snapshot CSV header.
#[derive(Debug, Clone)]
pub struct CsvLayout {
    pub attributes: Vec<(usize, String)>,
    /// `(column name, real field, predict field)`
    pub columns: Vec<(String, usize, Option<usize>)>,
}

impl CsvLayout {
    /// Split a header into attribute and value columns.
    pub fn from_header(header: &[&str], require_forecast: bool) -> Result<Self> {
        let mut attributes = Vec::new();
        let mut reals: Vec<(String, usize)> = Vec::new();
        let mut predicts: HashMap<String, usize> = HashMap::new();
        for (i, &h) in header.iter().enumerate() {
            let h = h.trim();
            if h == "real" {
                reals.push((DEFAULT_COLUMN.to_string(), i));
            } else if h == "predict" {
                predicts.insert(DEFAULT_COLUMN.to_string(), i);
            } else if let Some(c) = h.strip_prefix("real_") {
                reals.push((c.to_string(), i));
            } else if let Some(c) = h.strip_prefix("predict_") {
                predicts.insert(c.to_string(), i);
            } else {
                attributes.push((i, h.to_string()));
            }
        }
        if reals.is_empty() {
            return Err(Error::MissingColumn("real".into()));
        }
        if attributes.is_empty() {
            return Err(Error::Schema("no attribute columns".into()));
        }
        let mut columns = Vec::new();
        for (c, ri) in reals {
            let pi = predicts.remove(&c);
            if pi.is_none() && require_forecast {
                let name = if c == DEFAULT_COLUMN { "predict".into() } else { format!("predict_{c}") };
                return Err(Error::MissingColumn(name));
            }
            columns.push((c, ri, pi));
        }
        if let Some(c) = predicts.keys().next() {
            return Err(Error::MissingColumn(format!("real_{c}")));
        }
        Ok(Self { attributes, columns })
    }
}

/// Rows of a CSV snapshot before forecasts are attached.
#[derive(Debug, Clone)]
pub struct RawSnapshot {
    pub attributes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<LeafRow>,
}

/// Read a snapshot CSV. When `require_forecast` is false, missing `predict`
/// columns are filled with zeros (the caller is expected to forecast them).
pub fn read_csv_rows(csv_text: &str, require_forecast: bool) -> Result<RawSnapshot> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 0, msg: e.to_string() })?
        .clone();
    let header: Vec<&str> = header.iter().collect();
    let layout = CsvLayout::from_header(&header, require_forecast)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        let field = |idx: usize| -> Result<&str> {
            rec.get(idx).ok_or_else(|| Error::Parse { row, msg: format!("missing field {}", idx + 1) })
        };
        let values = layout
            .attributes
            .iter()
            .map(|(idx, _)| field(*idx).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let num = |idx: usize| -> Result<f64> {
            let s = field(idx)?;
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Parse { row, msg: format!("non-numeric value `{s}`") })?;
            check_value(v, row)?;
            Ok(v)
        };
        let mut real = Vec::with_capacity(layout.columns.len());
        let mut forecast = Vec::with_capacity(layout.columns.len());
        for (_, ri, pi) in &layout.columns {
            real.push(num(*ri)?);
            forecast.push(match pi {
                Some(p) => num(*p)?,
                None => 0.0,
            });
        }
        rows.push(LeafRow { values, real, forecast });
    }
    if rows.is_empty() {
        return Err(Error::NoLeaves);
    }
    Ok(RawSnapshot {
        attributes: layout.attributes.into_iter().map(|(_, n)| n).collect(),
        columns: layout.columns.into_iter().map(|(c, _, _)| c).collect(),
        rows,
    })
}

/// Parse a CSV snapshot with real and forecast columns.
pub fn parse_snapshot(csv_text: &str, measure: MeasureSpec) -> Result<Snapshot> {
    let raw = read_csv_rows(csv_text, true)?;
    Snapshot::from_rows(raw.attributes, raw.columns, raw.rows, measure)
}
