//! Hourly temperatures from the Open-Meteo historical archive.

use serde::Deserialize;

use evprofile::dataset::{parse_timestamp, WeatherTable};

use crate::run::{CmdResult, Failure};

#[derive(Debug, Deserialize)]
struct ArchiveResponse {
    hourly: Hourly,
}

#[derive(Debug, Deserialize)]
struct Hourly {
    time: Vec<String>,
    temperature_2m: Vec<Option<f64>>,
}

/// Converts an archive response body. Hours with a null temperature are
/// dropped.
pub fn parse_archive(body: &str) -> CmdResult<WeatherTable> {
    let r: ArchiveResponse =
        serde_json::from_str(body).map_err(|e| Failure::Data(format!("unexpected archive response: {e}")))?;
    let h = r.hourly;
    if h.time.len() != h.temperature_2m.len() {
        return Err(Failure::Data(format!(
            "archive response has {} times but {} temperatures",
            h.time.len(),
            h.temperature_2m.len()
        )));
    }
    let mut pairs = Vec::with_capacity(h.time.len());
    for (t, v) in h.time.iter().zip(h.temperature_2m) {
        let ts = parse_timestamp(t).ok_or_else(|| Failure::Data(format!("bad archive timestamp `{t}`")))?;
        if let Some(v) = v {
            pairs.push((ts, v));
        }
    }
    if pairs.is_empty() {
        return Err(Failure::Data("archive response has no temperatures".into()));
    }
    Ok(WeatherTable::from_pairs(pairs))
}

/// Queries `url` for hourly `temperature_2m` in local time at the site.
pub fn fetch(url: &str, latitude: f64, longitude: f64, start: &str, end: &str) -> CmdResult<WeatherTable> {
    let query = [
        ("latitude", latitude.to_string()),
        ("longitude", longitude.to_string()),
        ("start_date", start.to_string()),
        ("end_date", end.to_string()),
        ("hourly", "temperature_2m".to_string()),
        ("timezone", "auto".to_string()),
    ];
    let net = |e: reqwest::Error| Failure::Data(format!("weather request failed: {e}"));
    let resp = reqwest::blocking::Client::new()
        .get(url)
        .query(&query)
        .send()
        .map_err(net)?
        .error_for_status()
        .map_err(net)?;
    parse_archive(&resp.text().map_err(net)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_archive_body_and_drops_nulls() {
        let body = r#"{"latitude":46.5,"hourly_units":{"time":"iso8601"},
            "hourly":{"time":["2022-04-01T00:00","2022-04-01T01:00","2022-04-01T02:00"],
                      "temperature_2m":[3.5,null,2.25]}}"#;
        let w = parse_archive(body).unwrap();
        assert_eq!(w.temps.len(), 2);
        assert_eq!(w.temps.values().copied().collect::<Vec<_>>(), vec![3.5, 2.25]);
    }

    #[test]
    fn rejects_malformed_bodies() {
        assert_eq!(parse_archive("{}").unwrap_err().exit_code(), 3);
        let uneven = r#"{"hourly":{"time":["2022-04-01T00:00"],"temperature_2m":[]}}"#;
        assert!(parse_archive(uneven).is_err());
        let bad_ts = r#"{"hourly":{"time":["yesterday"],"temperature_2m":[1.0]}}"#;
        assert!(parse_archive(bad_ts).is_err());
    }
}
