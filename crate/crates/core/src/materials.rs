//! Material records, the delimited database file, and min-max scaling.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Exact header line of a material database file.
pub const HEADER: [&str; 6] = ["name", "class", "E_Pa", "cost_per_kg", "density_kg_m3", "yield_Pa"];

const TABLE1: &str = include_str!("../data/materials_table1.csv");

/// The four properties carried by every material, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Attribute {
    YoungsModulus,
    Cost,
    Density,
    YieldStrength,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [
        Attribute::YoungsModulus,
        Attribute::Cost,
        Attribute::Density,
        Attribute::YieldStrength,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short name used in exports and on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            Attribute::YoungsModulus => "E",
            Attribute::Cost => "C",
            Attribute::Density => "rho",
            Attribute::YieldStrength => "Y",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "e" | "youngs_modulus" | "modulus" => Some(Attribute::YoungsModulus),
            "c" | "cost" => Some(Attribute::Cost),
            "rho" | "density" => Some(Attribute::Density),
            "y" | "yield" | "yield_strength" => Some(Attribute::YieldStrength),
            _ => None,
        }
    }

    fn column(self) -> &'static str {
        HEADER[2 + self.index()]
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Young's modulus (Pa), cost ($/kg), density (kg/m³), yield strength (Pa).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Properties(pub [f64; 4]);

impl Properties {
    pub fn new(youngs_modulus: f64, cost: f64, density: f64, yield_strength: f64) -> Self {
        Self([youngs_modulus, cost, density, yield_strength])
    }

    pub fn youngs_modulus(&self) -> f64 {
        self.0[0]
    }

    pub fn cost(&self) -> f64 {
        self.0[1]
    }

    pub fn density(&self) -> f64 {
        self.0[2]
    }

    pub fn yield_strength(&self) -> f64 {
        self.0[3]
    }

    pub fn get(&self, attribute: Attribute) -> f64 {
        self.0[attribute.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub class: String,
    pub properties: Properties,
}

/// Per-attribute min-max bounds fitted over a database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: [f64; 4],
    pub max: [f64; 4],
}

impl Scaler {
    fn fit(materials: &[Material]) -> Result<Self, MaterialError> {
        let mut min = [f64::INFINITY; 4];
        let mut max = [f64::NEG_INFINITY; 4];
        for m in materials {
            for (i, &v) in m.properties.0.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        for attribute in Attribute::ALL {
            let i = attribute.index();
            if !(min[i] < max[i]) {
                return Err(MaterialError::Degenerate { attribute });
            }
        }
        Ok(Self { min, max })
    }

    pub fn scale(&self, p: &Properties) -> [f64; 4] {
        std::array::from_fn(|i| (p.0[i] - self.min[i]) / (self.max[i] - self.min[i]))
    }

    pub fn unscale(&self, s: &[f64; 4]) -> Properties {
        Properties(std::array::from_fn(|i| self.min[i] + s[i] * (self.max[i] - self.min[i])))
    }

    pub fn range(&self, attribute: Attribute) -> f64 {
        let i = attribute.index();
        self.max[i] - self.min[i]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MaterialError {
    #[error("cannot read material database: {0}")]
    Io(#[from] std::io::Error),
    #[error("material database header must be `{}`, found `{found}`", HEADER.join(","))]
    Header { found: String },
    #[error("material database line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("material database line {line}: duplicate material name `{name}`")]
    Duplicate { line: u64, name: String },
    #[error("attribute {attribute} takes a single value across the database; cannot fit scaler")]
    Degenerate { attribute: Attribute },
    #[error("class subset keeps {survivors} material(s); at least 2 are required")]
    SubsetTooSmall { survivors: usize },
}

/// Validated, immutable list of materials with a fitted scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialDatabase {
    materials: Vec<Material>,
    scaler: Scaler,
}

impl MaterialDatabase {
    /// Validates the rows and fits the scaler. Row order is preserved.
    pub fn new(materials: Vec<Material>) -> Result<Self, MaterialError> {
        let mut names = HashSet::new();
        for (i, m) in materials.iter().enumerate() {
            let line = i as u64 + 2;
            validate_properties(&m.properties).map_err(|message| MaterialError::Row { line, message })?;
            if !names.insert(m.name.as_str()) {
                return Err(MaterialError::Duplicate { line, name: m.name.clone() });
            }
        }
        let scaler = Scaler::fit(&materials)?;
        Ok(Self { materials, scaler })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MaterialError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file)
    }

    /// The nine-material curated subset shipped with the crate.
    pub fn table1() -> Self {
        Self::parse(TABLE1).expect("bundled table is valid")
    }

    pub fn parse(text: &str) -> Result<Self, MaterialError> {
        Self::from_reader(text.as_bytes())
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, MaterialError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let header = rdr.headers().map_err(csv_error)?.clone();
        if header.iter().ne(HEADER.iter().copied()) {
            return Err(MaterialError::Header {
                found: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut materials = Vec::new();
        let mut names = HashSet::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line());
            let row_err = |message: String| MaterialError::Row { line, message };
            if record.len() != HEADER.len() {
                return Err(row_err(format!("expected {} fields, found {}", HEADER.len(), record.len())));
            }
            let name = record[0].to_string();
            if name.is_empty() {
                return Err(row_err("empty material name".into()));
            }
            let mut values = [0.0; 4];
            for attribute in Attribute::ALL {
                let raw = &record[2 + attribute.index()];
                values[attribute.index()] = raw
                    .parse::<f64>()
                    .map_err(|_| row_err(format!("{} value `{raw}` is not a number", attribute.column())))?;
            }
            let properties = Properties(values);
            validate_properties(&properties).map_err(row_err)?;
            if !names.insert(name.clone()) {
                return Err(MaterialError::Duplicate { line, name });
            }
            materials.push(Material {
                name,
                class: record[1].to_string(),
                properties,
            });
        }
        let scaler = Scaler::fit(&materials)?;
        Ok(Self { materials, scaler })
    }

    /// Serializes in the same delimited format `load` accepts.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(HEADER).expect("in-memory write");
        for m in &self.materials {
            let p = m.properties.0;
            wtr.write_record([
                m.name.clone(),
                m.class.clone(),
                format!("{:e}", p[0]),
                format!("{:e}", p[1]),
                format!("{:e}", p[2]),
                format!("{:e}", p[3]),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MaterialError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Material> {
        self.materials.get(index)
    }

    pub fn find(&self, name: &str) -> Option<(usize, &Material)> {
        self.materials.iter().enumerate().find(|(_, m)| m.name == name)
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    /// Distinct class labels in first-appearance order.
    pub fn classes(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for m in &self.materials {
            if !seen.contains(&m.class) {
                seen.push(m.class.clone());
            }
        }
        seen
    }

    pub fn scale(&self, properties: &Properties) -> [f64; 4] {
        self.scaler.scale(properties)
    }

    pub fn unscale(&self, scaled: &[f64; 4]) -> Properties {
        self.scaler.unscale(scaled)
    }

    /// Rows whose class is in `classes`, with a freshly fitted scaler.
    pub fn filter_by_class<S: AsRef<str>>(&self, classes: &[S]) -> Result<Self, MaterialError> {
        let wanted: BTreeSet<&str> = classes.iter().map(|c| c.as_ref()).collect();
        let kept: Vec<Material> = self
            .materials
            .iter()
            .filter(|m| wanted.contains(m.class.as_str()))
            .cloned()
            .collect();
        if kept.len() < 2 {
            return Err(MaterialError::SubsetTooSmall { survivors: kept.len() });
        }
        Self::new(kept)
    }
}

fn validate_properties(p: &Properties) -> Result<(), String> {
    for attribute in Attribute::ALL {
        let v = p.get(attribute);
        if !(v.is_finite() && v > 0.0) {
            return Err(format!("{} must be positive and finite, got {v}", attribute.column()));
        }
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> MaterialError {
    let line = e.position().map_or(0, |p| p.line());
    MaterialError::Row {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table1_loads() {
        let db = MaterialDatabase::table1();
        assert_eq!(db.len(), 9);
        assert_eq!(db.classes(), vec!["Steel", "Al Alloy", "Plastic"]);
        let a286 = &db.materials()[0];
        assert_eq!(a286.name, "A286 Iron");
        assert_eq!(a286.class, "Steel");
        assert_eq!(a286.properties, Properties::new(2.01e11, 5.18, 7.92e3, 6.2e8));
    }

    #[test]
    fn single_material_is_degenerate() {
        let text = "name,class,E_Pa,cost_per_kg,density_kg_m3,yield_Pa\nA286 Iron,Steel,2.01E+11,5.18E+00,7.92E+03,6.20E+08\n";
        assert!(matches!(MaterialDatabase::parse(text), Err(MaterialError::Degenerate { .. })));
    }

    #[test]
    fn rejects_bad_header() {
        let text = "name,class,E,cost,density,yield\nA,Steel,1,1,1,1\nB,Steel,2,2,2,2\n";
        assert!(matches!(MaterialDatabase::parse(text), Err(MaterialError::Header { .. })));
    }

    #[test]
    fn rejects_missing_column() {
        let text = "name,class,E_Pa,cost_per_kg,density_kg_m3,yield_Pa\nA,Steel,1,1,1\n";
        let err = MaterialDatabase::parse(text).unwrap_err();
        assert!(matches!(err, MaterialError::Row { line: 2, .. }), "{err}");
    }

    #[test]
    fn rejects_non_numeric_and_non_positive() {
        let base = "name,class,E_Pa,cost_per_kg,density_kg_m3,yield_Pa\nA,Steel,1,1,1,1\n";
        let err = MaterialDatabase::parse(&format!("{base}B,Steel,x,2,2,2\n")).unwrap_err();
        assert!(matches!(err, MaterialError::Row { line: 3, .. }), "{err}");
        let err = MaterialDatabase::parse(&format!("{base}B,Steel,0,2,2,2\n")).unwrap_err();
        assert!(matches!(err, MaterialError::Row { line: 3, .. }), "{err}");
        let err = MaterialDatabase::parse(&format!("{base}B,Steel,2,-2,2,2\n")).unwrap_err();
        assert!(err.to_string().contains("cost_per_kg"));
    }

    #[test]
    fn rejects_duplicate_name() {
        let text = "name,class,E_Pa,cost_per_kg,density_kg_m3,yield_Pa\nA,Steel,1,1,1,1\nA,Steel,2,2,2,2\n";
        match MaterialDatabase::parse(text) {
            Err(MaterialError::Duplicate { line, name }) => {
                assert_eq!(line, 3);
                assert_eq!(name, "A");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scaler_endpoints() {
        let db = MaterialDatabase::table1();
        let s = db.scaler();
        let mins = Properties(s.min);
        let maxs = Properties(s.max);
        assert_eq!(db.scale(&mins), [0.0; 4]);
        assert_eq!(db.scale(&maxs), [1.0; 4]);
        assert_eq!(db.unscale(&[0.0; 4]), mins);
        assert_eq!(db.unscale(&[1.0; 4]), maxs);
        for m in db.materials() {
            let sc = db.scale(&m.properties);
            assert!(sc.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn scale_round_trips_every_row() {
        let db = MaterialDatabase::table1();
        for m in db.materials() {
            let back = db.unscale(&db.scale(&m.properties));
            for i in 0..4 {
                let rel = (back.0[i] - m.properties.0[i]).abs() / m.properties.0[i];
                assert!(rel < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_maps_outside_unit_interval() {
        let db = MaterialDatabase::table1();
        let p = Properties::new(4e11, 0.1, 2e4, 1e7);
        let s = db.scale(&p);
        assert!(s[0] > 1.0 && s[1] < 0.0 && s[2] > 1.0 && s[3] < 0.0);
    }

    #[test]
    fn filter_examples() {
        let db = MaterialDatabase::table1();
        assert_eq!(db.filter_by_class(&["Steel"]).unwrap().len(), 3);
        let plastics = db.filter_by_class(&["Plastic"]).unwrap();
        let names: Vec<_> = plastics.materials().iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, ["Acrylic", "ABS", "PE HD"]);
        assert_ne!(plastics.scaler(), db.scaler());
        let all = db.filter_by_class(&db.classes()).unwrap();
        assert_eq!(all, db);
        assert!(matches!(
            db.filter_by_class(&["Titanium"]),
            Err(MaterialError::SubsetTooSmall { survivors: 0 })
        ));
    }

    #[test]
    fn save_and_reload_is_identical() {
        let db = MaterialDatabase::table1();
        let again = MaterialDatabase::parse(&db.to_csv()).unwrap();
        assert_eq!(again, db);
        assert_eq!(MaterialDatabase::parse(&again.to_csv()).unwrap(), db);
    }

    #[test]
    fn attribute_names_parse() {
        for a in Attribute::ALL {
            assert_eq!(Attribute::parse(a.short_name()), Some(a));
        }
        assert_eq!(Attribute::parse("youngs_modulus"), Some(Attribute::YoungsModulus));
        assert_eq!(Attribute::parse("hardness"), None);
    }

    proptest! {
        #[test]
        fn scaling_is_strictly_monotone(a in 1e5f64..1e12, b in 1e5f64..1e12, idx in 0usize..4) {
            prop_assume!(a < b);
            let db = MaterialDatabase::table1();
            let mut pa = db.materials()[0].properties;
            let mut pb = pa;
            pa.0[idx] = a;
            pb.0[idx] = b;
            prop_assert!(db.scale(&pa)[idx] < db.scale(&pb)[idx]);
        }

        #[test]
        fn random_scaled_vectors_round_trip(s in prop::array::uniform4(-0.5f64..1.5)) {
            let db = MaterialDatabase::table1();
            let back = db.scale(&db.unscale(&s));
            for i in 0..4 {
                prop_assert!((back[i] - s[i]).abs() < 1e-12);
            }
        }
    }
}
