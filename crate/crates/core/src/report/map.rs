use serde::Serialize;
use serde_json::{json, Value};

use super::CityAggregate;
use crate::corpus::CityRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuartileClass {
    Low,
    Middle,
    High,
}

impl QuartileClass {
    pub fn color(self) -> &'static str {
        match self {
            QuartileClass::Low => "green",
            QuartileClass::Middle => "yellow",
            QuartileClass::High => "red",
        }
    }
}

/// Lowest quarter, middle half, top quarter by `(value, key)` order; each
/// outer class gets floor(n / 4) members.
pub fn quartile_classes(values: &[(&str, f64)]) -> Vec<QuartileClass> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].1.total_cmp(&values[b].1).then_with(|| values[a].0.cmp(values[b].0)));
    let q = n / 4;
    let mut out = vec![QuartileClass::Middle; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos < q {
            out[i] = QuartileClass::Low;
        } else if pos >= n - q {
            out[i] = QuartileClass::High;
        }
    }
    out
}

fn normalized(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        v / max
    } else {
        0.0
    }
}

/// GeoJSON feature collection, one point feature per city. Cities without
/// coordinates get a null geometry.
pub fn emit_map_data(aggregates: &[CityAggregate], registry: &CityRegistry, header: &str) -> Value {
    let crimes: Vec<(&str, f64)> = aggregates.iter().map(|a| (a.city_key.as_str(), a.hate_crime_count as f64)).collect();
    let rates: Vec<(&str, f64)> = aggregates.iter().map(|a| (a.city_key.as_str(), a.discrimination_rate)).collect();
    let crime_class = quartile_classes(&crimes);
    let rate_class = quartile_classes(&rates);
    let max_rate = rates.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_tpu = aggregates.iter().filter_map(|a| a.tweets_per_user).fold(0.0, f64::max);
    let features: Vec<Value> = aggregates
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let geometry = match registry.get(&a.city_key).and_then(|c| c.coordinates) {
                Some((lat, lon)) => json!({"type": "Point", "coordinates": [lon, lat]}),
                None => {
                    log::warn!("{} has no coordinates; feature emitted without geometry", a.city_key);
                    Value::Null
                }
            };
            json!({
                "type": "Feature",
                "geometry": geometry,
                "properties": {
                    "city_key": a.city_key,
                    "hate_crime_count": a.hate_crime_count,
                    "hate_crime_class": crime_class[i],
                    "hate_crime_color": crime_class[i].color(),
                    "discrimination_rate": a.discrimination_rate,
                    "discrimination_rate_class": rate_class[i],
                    "discrimination_rate_color": rate_class[i].color(),
                    "dot_size_rate": normalized(a.discrimination_rate, max_rate),
                    "tweets_per_user": a.tweets_per_user,
                    "dot_size_tweets_per_user": normalized(a.tweets_per_user.unwrap_or(0.0), max_tpu),
                    "targeted_proportion": a.targeted_proportion,
                    "underline": a.targeted_proportion > 0.5,
                }
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "header": header, "features": features})
}
