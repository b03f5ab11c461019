//! Observation schema, categorical vocabularies and the CSV/JSON on-disk format.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the canonical CSV file.
pub const CSV_HEADER: [&str; 15] = [
    "sku_id",
    "store_id",
    "date",
    "sales",
    "price",
    "weight",
    "promotion",
    "brand",
    "country",
    "colour",
    "form",
    "flour",
    "package_type",
    "store_type",
    "holiday",
];

/// Categorical variables, in encoding order. The last three are derived from the date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Categorical {
    Brand,
    Country,
    Colour,
    Form,
    Flour,
    PackageType,
    StoreType,
    Year,
    Month,
    DayOfWeek,
}

impl Categorical {
    pub const ALL: [Categorical; 10] = [
        Categorical::Brand,
        Categorical::Country,
        Categorical::Colour,
        Categorical::Form,
        Categorical::Flour,
        Categorical::PackageType,
        Categorical::StoreType,
        Categorical::Year,
        Categorical::Month,
        Categorical::DayOfWeek,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Categorical::Brand => "brand",
            Categorical::Country => "country",
            Categorical::Colour => "colour",
            Categorical::Form => "form",
            Categorical::Flour => "flour",
            Categorical::PackageType => "package_type",
            Categorical::StoreType => "store_type",
            Categorical::Year => "year",
            Categorical::Month => "month",
            Categorical::DayOfWeek => "day_of_week",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Vocabulary implied by the calendar, used when the sidecar omits it.
    fn default_vocabulary(self) -> Option<Vec<String>> {
        match self {
            Categorical::Month => Some((1..=12).map(|m| format!("{m:02}")).collect()),
            Categorical::DayOfWeek => Some((1..=7).map(|d| d.to_string()).collect()),
            _ => None,
        }
    }
}

/// Declared categorical vocabularies, as stored in the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub vocabularies: BTreeMap<String, Vec<String>>,
}

impl Schema {
    /// Validates the declared vocabularies and fills in the calendar ones.
    pub fn new(mut vocabularies: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for cat in Categorical::ALL {
            if !vocabularies.contains_key(cat.name()) {
                match cat.default_vocabulary() {
                    Some(v) => {
                        vocabularies.insert(cat.name().to_string(), v);
                    }
                    None => {
                        return Err(Error::validation(format!(
                            "schema does not declare a vocabulary for `{}`",
                            cat.name()
                        )))
                    }
                }
            }
        }
        for (name, levels) in &vocabularies {
            if Categorical::from_name(name).is_none() {
                return Err(Error::validation(format!(
                    "schema declares unknown categorical `{name}`"
                )));
            }
            if levels.is_empty() {
                return Err(Error::validation(format!("vocabulary `{name}` is empty")));
            }
            let mut seen = std::collections::BTreeSet::new();
            for level in levels {
                if level.is_empty() || !seen.insert(level) {
                    return Err(Error::validation(format!(
                        "vocabulary `{name}` has an empty or duplicate level `{level}`"
                    )));
                }
            }
        }
        Ok(Schema { vocabularies })
    }

    pub fn levels(&self, cat: Categorical) -> &[String] {
        &self.vocabularies[cat.name()]
    }

    pub fn code(&self, cat: Categorical, level: &str) -> Option<u16> {
        self.levels(cat)
            .iter()
            .position(|l| l == level)
            .map(|p| p as u16)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let raw: Schema =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Corrupt {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Schema::new(raw.vocabularies)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One SKU displayed in one store on one day.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sku_id: String,
    pub store_id: String,
    pub date: NaiveDate,
    /// Packs sold.
    pub sales: u32,
    /// Rub per package.
    pub price: f64,
    /// Grams.
    pub weight: f64,
    pub promotion: bool,
    pub holiday: bool,
    /// Vocabulary codes indexed by [`Categorical::index`].
    pub categories: [u16; 10],
}

impl Observation {
    pub fn category(&self, cat: Categorical) -> u16 {
        self.categories[cat.index()]
    }
}

/// Calendar-derived levels (year, month, ISO weekday) for a date.
pub fn calendar_levels(date: NaiveDate) -> [String; 3] {
    [
        date.year().to_string(),
        format!("{:02}", date.month()),
        date.weekday().number_from_monday().to_string(),
    ]
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Schema,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn zero_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let zeros = self.observations.iter().filter(|o| o.sales == 0).count();
        zeros as f64 / self.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{}", CSV_HEADER.join(",")).map_err(io)?;
        for o in &self.observations {
            let cat = |c: Categorical| self.schema.levels(c)[o.category(c) as usize].as_str();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                o.sku_id,
                o.store_id,
                o.date.format("%Y-%m-%d"),
                o.sales,
                o.price,
                o.weight,
                u8::from(o.promotion),
                cat(Categorical::Brand),
                cat(Categorical::Country),
                cat(Categorical::Colour),
                cat(Categorical::Form),
                cat(Categorical::Flour),
                cat(Categorical::PackageType),
                cat(Categorical::StoreType),
                u8::from(o.holiday),
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Parses a dataset CSV against the declared vocabularies.
///
/// Rows are numbered from 1 (the header is not counted). The first offending
/// cell aborts the load.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let display = path.display().to_string();

    let header = reader.headers().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if found != CSV_HEADER {
        return Err(Error::Load {
            path: display,
            row: 0,
            column: "header".into(),
            message: format!("expected columns {:?}, found {:?}", CSV_HEADER, found),
        });
    }

    let mut observations = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Load {
            path: display.clone(),
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        observations.push(parse_row(&record, row, &display, schema)?);
    }
    Ok(Dataset {
        schema: schema.clone(),
        observations,
    })
}

fn parse_row(
    record: &csv::StringRecord,
    row: usize,
    path: &str,
    schema: &Schema,
) -> Result<Observation> {
    let fail = |column: &str, message: String| Error::Load {
        path: path.to_string(),
        row,
        column: column.to_string(),
        message,
    };
    let mut cells = [""; 15];
    for (j, name) in CSV_HEADER.iter().enumerate() {
        let cell = record.get(j).map(str::trim).unwrap_or("");
        if cell.is_empty() {
            return Err(fail(name, "missing value".into()));
        }
        cells[j] = cell;
    }

    let date = NaiveDate::parse_from_str(cells[2], "%Y-%m-%d")
        .map_err(|_| fail("date", format!("`{}` is not an ISO-8601 date", cells[2])))?;
    let sales: i64 = cells[3]
        .parse()
        .map_err(|_| fail("sales", format!("`{}` is not an integer", cells[3])))?;
    if sales < 0 {
        return Err(fail("sales", format!("negative sales {sales}")));
    }
    let sales = u32::try_from(sales).map_err(|_| fail("sales", "value too large".into()))?;
    let positive = |j: usize| -> Result<f64> {
        let v: f64 = cells[j]
            .parse()
            .map_err(|_| fail(CSV_HEADER[j], format!("`{}` is not numeric", cells[j])))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(fail(CSV_HEADER[j], format!("{v} must be strictly positive")));
        }
        Ok(v)
    };
    let price = positive(4)?;
    let weight = positive(5)?;
    let binary = |j: usize| -> Result<bool> {
        match cells[j] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(fail(CSV_HEADER[j], format!("`{other}` is not 0 or 1"))),
        }
    };
    let promotion = binary(6)?;
    let holiday = binary(14)?;

    let mut categories = [0u16; 10];
    let csv_cats = [
        (Categorical::Brand, 7),
        (Categorical::Country, 8),
        (Categorical::Colour, 9),
        (Categorical::Form, 10),
        (Categorical::Flour, 11),
        (Categorical::PackageType, 12),
        (Categorical::StoreType, 13),
    ];
    let lookup = |cat: Categorical, level: &str, column: &str| -> Result<u16> {
        schema.code(cat, level).ok_or_else(|| {
            fail(
                column,
                format!(
                    "unknown level `{level}` for `{}` (declared: {})",
                    cat.name(),
                    schema.levels(cat).join(", ")
                ),
            )
        })
    };
    for (cat, j) in csv_cats {
        categories[cat.index()] = lookup(cat, cells[j], CSV_HEADER[j])?;
    }
    let [year, month, dow] = calendar_levels(date);
    categories[Categorical::Year.index()] = lookup(Categorical::Year, &year, "date")?;
    categories[Categorical::Month.index()] = lookup(Categorical::Month, &month, "date")?;
    categories[Categorical::DayOfWeek.index()] = lookup(Categorical::DayOfWeek, &dow, "date")?;

    Ok(Observation {
        sku_id: cells[0].to_string(),
        store_id: cells[1].to_string(),
        date,
        sales,
        price,
        weight,
        promotion,
        holiday,
        categories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::small_schema;

    const HEADER: &str = "sku_id,store_id,date,sales,price,weight,promotion,brand,country,colour,form,flour,package_type,store_type,holiday";

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("data.csv");
        std::fs::write(&p, format!("{HEADER}\n{body}")).unwrap();
        p
    }

    #[test]
    fn parses_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s1,m1,2012-03-05,0,35.5,450,0,Alpha,IT,white,penne,durum,bag,hyper,0\n\
             s1,m2,2012-03-10,2,30,450,1,Alpha,IT,white,penne,durum,bag,super,1\n\
             s2,m1,2013-12-31,1,48.1,1000,0,Beta,RU,yellow,spaghetti,soft,box,hyper,0\n",
        );
        let ds = load_dataset(&p, &small_schema()).unwrap();
        assert_eq!(ds.len(), 3);
        let o = &ds.observations[1];
        assert_eq!(o.sales, 2);
        assert!(o.promotion && o.holiday);
        assert_eq!(o.category(Categorical::StoreType), 1);
        // 2012-03-10 is a Saturday.
        assert_eq!(
            ds.schema.levels(Categorical::DayOfWeek)[o.category(Categorical::DayOfWeek) as usize],
            "6"
        );
        assert_eq!(ds.observations[2].category(Categorical::Year), 1);
    }

    #[test]
    fn negative_sales_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s1,m1,2012-03-05,1,35.5,450,0,Alpha,IT,white,penne,durum,bag,hyper,0\n\
             s1,m1,2012-03-06,-1,35.5,450,0,Alpha,IT,white,penne,durum,bag,hyper,0\n",
        );
        match load_dataset(&p, &small_schema()).unwrap_err() {
            Error::Load { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "sales");
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn unknown_level_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s1,m1,2012-03-05,1,35.5,450,0,Gamma,IT,white,penne,durum,bag,hyper,0\n",
        );
        let err = load_dataset(&p, &small_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Gamma"), "{msg}");
        assert!(msg.contains("brand"), "{msg}");
    }

    #[test]
    fn rejects_non_numeric_price_and_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s1,m1,2012-03-05,1,cheap,450,0,Alpha,IT,white,penne,durum,bag,hyper,0\n",
        );
        assert!(matches!(
            load_dataset(&p, &small_schema()),
            Err(Error::Load { ref column, .. }) if column == "price"
        ));
        let p = write(
            &dir,
            "s1,m1,2012-03-05,1,35,,0,Alpha,IT,white,penne,durum,bag,hyper,0\n",
        );
        assert!(matches!(
            load_dataset(&p, &small_schema()),
            Err(Error::Load { ref column, .. }) if column == "weight"
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_dataset(Path::new("/nonexistent/data.csv"), &small_schema()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn csv_round_trip_preserves_observations() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s1,m1,2012-03-05,0,35.57,450,0,Alpha,IT,white,penne,durum,bag,hyper,0\n\
             s2,m1,2013-12-31,1,48.1,1000,1,Beta,RU,yellow,spaghetti,soft,box,hyper,1\n",
        );
        let ds = load_dataset(&p, &small_schema()).unwrap();
        let q = dir.path().join("copy.csv");
        ds.write_csv(&q).unwrap();
        let again = load_dataset(&q, &small_schema()).unwrap();
        assert_eq!(ds.observations, again.observations);
    }

    #[test]
    fn schema_requires_product_vocabularies() {
        let mut v = small_schema().vocabularies;
        v.remove("flour");
        assert!(Schema::new(v).is_err());
    }
}
