use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::datamodel::{Observation, Schema};

pub fn small_schema() -> Schema {
    let mut v = BTreeMap::new();
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    v.insert("brand".into(), s(&["Alpha", "Beta"]));
    v.insert("country".into(), s(&["IT", "RU"]));
    v.insert("colour".into(), s(&["white", "yellow"]));
    v.insert("form".into(), s(&["penne", "spaghetti"]));
    v.insert("flour".into(), s(&["durum", "soft"]));
    v.insert("package_type".into(), s(&["bag", "box"]));
    v.insert("store_type".into(), s(&["hyper", "super"]));
    v.insert("year".into(), s(&["2012", "2013"]));
    Schema::new(v).unwrap()
}

pub fn observation(sku: &str, price: f64, sales: u32, categories: [u16; 10]) -> Observation {
    Observation {
        sku_id: sku.to_string(),
        store_id: "m1".to_string(),
        date: NaiveDate::from_ymd_opt(2012, 3, 5).unwrap(),
        sales,
        price,
        weight: 450.0,
        promotion: false,
        holiday: false,
        categories,
    }
}
