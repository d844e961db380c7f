//! Seeded synthetic LPWAN fingerprints.
//!
//! Message locations follow a uniform or hotspot-mixture density inside a
//! lat/lon box. RSS at each gateway follows log-distance path loss with
//! Gaussian shadowing; values under the detection threshold become the
//! sentinel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Fingerprint, DEFAULT_SENTINEL_DBM, RSS_RANGE_DBM};
use crate::error::{Error, Result};
use crate::geo::{haversine, LatLon, EARTH_RADIUS_M};
use crate::pipeline::EstimateRecord;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayLayout {
    Grid,
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    /// Mean RSS at the reference distance, dBm.
    pub p0_dbm: f64,
    pub exponent: f64,
    /// Reference distance, meters.
    pub d0_m: f64,
}

impl PathLoss {
    /// Noiseless RSS at distance `d` meters; flat inside `d0`.
    pub fn mean_rss(&self, d: f64) -> f64 {
        self.p0_dbm - 10.0 * self.exponent * (d.max(self.d0_m) / self.d0_m).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub center: LatLon,
    pub sigma_m: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityProfile {
    Uniform,
    /// Gaussian hotspots plus a uniform background with weight
    /// `background_weight`.
    Hotspots {
        hotspots: Vec<Hotspot>,
        background_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub south_west: LatLon,
    pub north_east: LatLon,
    pub n_gateways: usize,
    pub layout: GatewayLayout,
    pub path_loss: PathLoss,
    pub shadowing_db: f64,
    pub detection_dbm: f64,
    #[serde(default = "default_sentinel")]
    pub sentinel: f64,
    pub n_messages: usize,
    pub density: DensityProfile,
}

fn default_sentinel() -> f64 {
    DEFAULT_SENTINEL_DBM
}

fn ll(lat: f64, lon: f64) -> LatLon {
    LatLon::new(lat, lon).expect("literal coordinate")
}

impl Default for ScenarioConfig {
    /// About 2 km x 2 km in Antwerp, 9 gateways on a grid, 3000 messages
    /// concentrated around three hotspots of different size.
    fn default() -> Self {
        ScenarioConfig {
            south_west: ll(51.2000, 4.3900),
            north_east: ll(51.2180, 4.4187),
            n_gateways: 9,
            layout: GatewayLayout::Grid,
            path_loss: PathLoss {
                p0_dbm: -60.0,
                exponent: 3.0,
                d0_m: 50.0,
            },
            shadowing_db: 6.0,
            detection_dbm: -112.0,
            sentinel: DEFAULT_SENTINEL_DBM,
            n_messages: 3000,
            density: DensityProfile::Hotspots {
                hotspots: vec![
                    Hotspot {
                        center: ll(51.2120, 4.4100),
                        sigma_m: 180.0,
                        weight: 0.50,
                    },
                    Hotspot {
                        center: ll(51.2040, 4.3960),
                        sigma_m: 220.0,
                        weight: 0.25,
                    },
                    Hotspot {
                        center: ll(51.2150, 4.3950),
                        sigma_m: 120.0,
                        weight: 0.08,
                    },
                ],
                background_weight: 0.17,
            },
        }
    }
}

impl ScenarioConfig {
    /// `default` or `uniform` (the default scenario with uniform density).
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "uniform" => Ok(ScenarioConfig {
                density: DensityProfile::Uniform,
                ..Self::default()
            }),
            other => Err(Error::Config(format!("unknown synthetic scenario `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (sw, ne) = (self.south_west, self.north_east);
        if !(ne.lat() > sw.lat() && ne.lon() > sw.lon()) {
            return Err(Error::Config("scenario bounds are degenerate".into()));
        }
        if self.n_gateways == 0 {
            return Err(Error::Config("scenario needs at least one gateway".into()));
        }
        if self.n_messages == 0 {
            return Err(Error::Config("scenario needs at least one message".into()));
        }
        if !(self.shadowing_db >= 0.0) {
            return Err(Error::Config("shadowing sigma must be >= 0".into()));
        }
        if !(self.detection_dbm > self.sentinel) || self.detection_dbm < RSS_RANGE_DBM.0 {
            return Err(Error::Config(
                "detection threshold must exceed the sentinel and -200 dBm".into(),
            ));
        }
        let pl = self.path_loss;
        if !(pl.d0_m > 0.0) || !(pl.exponent > 0.0) || !pl.p0_dbm.is_finite() {
            return Err(Error::Config("path-loss parameters must be positive and finite".into()));
        }
        if let DensityProfile::Hotspots {
            hotspots,
            background_weight,
        } = &self.density
        {
            let total: f64 = hotspots.iter().map(|h| h.weight).sum::<f64>() + background_weight;
            if hotspots.iter().any(|h| !(h.weight >= 0.0) || !(h.sigma_m > 0.0))
                || !(*background_weight >= 0.0)
                || !(total > 0.0)
            {
                return Err(Error::Config(
                    "hotspot weights must be >= 0 with a positive total".into(),
                ));
            }
        }
        Ok(())
    }

    fn uniform_point(&self, rng: &mut ChaCha8Rng) -> LatLon {
        let (sw, ne) = (self.south_west, self.north_east);
        ll(
            rng.random_range(sw.lat()..ne.lat()),
            rng.random_range(sw.lon()..ne.lon()),
        )
    }

    fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.south_west.lat()..=self.north_east.lat()).contains(&lat)
            && (self.south_west.lon()..=self.north_east.lon()).contains(&lon)
    }

    fn sample_location(&self, rng: &mut ChaCha8Rng) -> LatLon {
        let DensityProfile::Hotspots {
            hotspots,
            background_weight,
        } = &self.density
        else {
            return self.uniform_point(rng);
        };
        let total: f64 = hotspots.iter().map(|h| h.weight).sum::<f64>() + background_weight;
        let mut u = rng.random_range(0.0..total);
        let chosen = hotspots.iter().find(|h| {
            if u < h.weight {
                true
            } else {
                u -= h.weight;
                false
            }
        });
        let Some(h) = chosen else {
            return self.uniform_point(rng);
        };
        let normal = Normal::new(0.0, h.sigma_m).expect("sigma validated");
        for _ in 0..100 {
            let (dx, dy) = (normal.sample(rng), normal.sample(rng));
            let lat = h.center.lat() + (dy / EARTH_RADIUS_M).to_degrees();
            let lon = h.center.lon() + (dx / (EARTH_RADIUS_M * h.center.lat().to_radians().cos())).to_degrees();
            if self.contains(lat, lon) {
                return ll(lat, lon);
            }
        }
        self.uniform_point(rng)
    }
}

pub fn gateway_positions(cfg: &ScenarioConfig, seed: u64) -> Result<Vec<LatLon>> {
    cfg.validate()?;
    let (sw, ne) = (cfg.south_west, cfg.north_east);
    let (dlat, dlon) = (ne.lat() - sw.lat(), ne.lon() - sw.lon());
    Ok(match cfg.layout {
        GatewayLayout::Grid => {
            let cols = (cfg.n_gateways as f64).sqrt().ceil() as usize;
            let rows = cfg.n_gateways.div_ceil(cols);
            (0..cfg.n_gateways)
                .map(|g| {
                    let (r, c) = (g / cols, g % cols);
                    ll(
                        sw.lat() + dlat * (r as f64 + 0.5) / rows as f64,
                        sw.lon() + dlon * (c as f64 + 0.5) / cols as f64,
                    )
                })
                .collect()
        }
        GatewayLayout::UniformRandom => {
            let mut rng = seed::rng(seed::derive(seed, "gateways"));
            (0..cfg.n_gateways).map(|_| cfg.uniform_point(&mut rng)).collect()
        }
    })
}

/// Message `i` draws from its own ChaCha stream `i` under
/// `derive(seed, "messages")`, so generation order does not matter.
pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<Dataset> {
    let gateways = gateway_positions(cfg, seed)?;
    let message_seed = seed::derive(seed, "messages");
    let shadow = Normal::new(0.0, cfg.shadowing_db).map_err(|e| Error::Config(e.to_string()))?;
    let records: Vec<Fingerprint> = (0..cfg.n_messages)
        .into_par_iter()
        .map(|id| {
            let mut rng = seed::rng(message_seed);
            rng.set_stream(id as u64);
            let truth = cfg.sample_location(&mut rng);
            let rss = gateways
                .iter()
                .map(|&g| {
                    let v = cfg.path_loss.mean_rss(haversine(truth, g)) + shadow.sample(&mut rng);
                    if v < cfg.detection_dbm {
                        cfg.sentinel
                    } else {
                        v.min(RSS_RANGE_DBM.1)
                    }
                })
                .collect();
            Fingerprint { id, rss, truth }
        })
        .collect();
    let names = (0..cfg.n_gateways).map(|g| format!("gw{g:02}")).collect();
    Dataset::new(records, names, cfg.sentinel)
}

/// Copies with the DAE replaced by the true error: the best ordering any
/// accuracy model could produce.
pub fn perfect_dae_oracle(records: &[EstimateRecord]) -> Vec<EstimateRecord> {
    records
        .iter()
        .map(|r| EstimateRecord {
            dae: r.error_pos,
            error_dae: 0.0,
            ..r.clone()
        })
        .collect()
}
