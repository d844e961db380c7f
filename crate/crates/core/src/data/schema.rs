use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DEFAULT_SENTINEL_DBM;
use crate::error::{Error, Result};

/// Which header columns hold per-gateway RSS values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RssColumns {
    /// Every column whose name starts with the prefix.
    Prefix(String),
    /// Exactly these columns, in this order.
    Columns(Vec<String>),
    /// Every column except the id/lat/lon columns and the listed ones.
    AllExcept(Vec<String>),
}

/// Maps CSV header names onto fingerprint fields.
///
/// Accepted as JSON:
///
/// ```json
/// {"lat": "Latitude", "lon": "Longitude", "rss": {"prefix": "BS "}, "sentinel": -200}
/// ```
///
/// or as `key = value` lines (`lat`, `lon`, `id`, `sentinel`, and one of
/// `rss_prefix`, `rss_columns`, `rss_all_except` with comma-separated names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub id: Option<String>,
    pub lat: String,
    pub lon: String,
    pub rss: RssColumns,
    #[serde(default = "default_sentinel")]
    pub sentinel: f64,
}

fn default_sentinel() -> f64 {
    DEFAULT_SENTINEL_DBM
}

impl Default for Schema {
    fn default() -> Self {
        Schema::canonical()
    }
}

impl Schema {
    /// Layout written by [`super::write_csv`]: `id`, one column per gateway,
    /// then `lat`, `lon`.
    pub fn canonical() -> Self {
        Schema {
            id: Some("id".into()),
            lat: "lat".into(),
            lon: "lon".into(),
            rss: RssColumns::AllExcept(Vec::new()),
            sentinel: DEFAULT_SENTINEL_DBM,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return Ok(serde_json::from_str(text)?);
        }
        Self::parse_key_values(text)
    }

    fn parse_key_values(text: &str) -> Result<Self> {
        let mut id = None;
        let mut lat = None;
        let mut lon = None;
        let mut rss = None;
        let mut sentinel = DEFAULT_SENTINEL_DBM;
        let list = |v: &str| -> Vec<String> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let mut set_rss = |cols: RssColumns| {
                if rss.replace(cols).is_some() {
                    Err(Error::Schema("more than one rss_* key".into()))
                } else {
                    Ok(())
                }
            };
            match key {
                "id" => id = Some(value.to_string()),
                "lat" => lat = Some(value.to_string()),
                "lon" => lon = Some(value.to_string()),
                "rss_prefix" => set_rss(RssColumns::Prefix(value.to_string()))?,
                "rss_columns" => set_rss(RssColumns::Columns(list(value)))?,
                "rss_all_except" => set_rss(RssColumns::AllExcept(list(value)))?,
                "sentinel" => {
                    sentinel = value
                        .parse()
                        .map_err(|_| Error::Schema(format!("sentinel `{value}` is not a number")))?
                }
                other => return Err(Error::Schema(format!("unknown key `{other}`"))),
            }
        }
        Ok(Schema {
            id,
            lat: lat.ok_or_else(|| Error::Schema("missing `lat`".into()))?,
            lon: lon.ok_or_else(|| Error::Schema("missing `lon`".into()))?,
            rss: rss.ok_or_else(|| Error::Schema("missing rss_prefix / rss_columns / rss_all_except".into()))?,
            sentinel,
        })
    }

    /// Header positions of (id, lat, lon, rss columns).
    pub(crate) fn resolve(&self, header: &[String]) -> Result<ResolvedSchema> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let id = self.id.as_deref().map(find).transpose()?;
        let lat = find(&self.lat)?;
        let lon = find(&self.lon)?;
        let rss: Vec<usize> = match &self.rss {
            RssColumns::Prefix(prefix) => (0..header.len())
                .filter(|&i| header[i].starts_with(prefix.as_str()) && Some(i) != id && i != lat && i != lon)
                .collect(),
            RssColumns::Columns(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
            RssColumns::AllExcept(excluded) => {
                for e in excluded {
                    find(e)?;
                }
                (0..header.len())
                    .filter(|&i| Some(i) != id && i != lat && i != lon && !excluded.contains(&header[i]))
                    .collect()
            }
        };
        if rss.is_empty() {
            return Err(Error::Schema("schema selects no RSS columns".into()));
        }
        Ok(ResolvedSchema { id, lat, lon, rss })
    }
}

#[derive(Debug)]
pub(crate) struct ResolvedSchema {
    pub id: Option<usize>,
    pub lat: usize,
    pub lon: usize,
    pub rss: Vec<usize>,
}
