//! Circular geofences over a site catalog.

use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::{Dataset, PhotoRecord};

/// Mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog is empty")]
    Empty,
    #[error("duplicate site_id: {0}")]
    DuplicateSite(String),
    #[error("site {0}: buffer_km must be positive and finite")]
    InvalidBuffer(String),
    #[error("site {0}: center coordinates out of range")]
    InvalidCenter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TicketGroup {
    #[serde(rename = "BTC1")]
    Btc1,
    #[serde(rename = "BTC2")]
    Btc2,
    #[serde(rename = "BTC3")]
    Btc3,
    #[serde(rename = "UNESCO")]
    Unesco,
    #[serde(rename = "NONE")]
    None,
}

impl std::str::FromStr for TicketGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BTC1" => Ok(TicketGroup::Btc1),
            "BTC2" => Ok(TicketGroup::Btc2),
            "BTC3" => Ok(TicketGroup::Btc3),
            "UNESCO" => Ok(TicketGroup::Unesco),
            "NONE" => Ok(TicketGroup::None),
            other => Err(format!("unknown ticket group: {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: String,
    pub name: String,
    pub center_lat: f64,
    pub center_lon: f64,
    pub buffer_km: f64,
    pub ticket_group: TicketGroup,
}

impl Site {
    pub fn center(&self) -> LatLon {
        LatLon::new(self.center_lat, self.center_lon)
    }
}

/// A non-empty ordered list of sites with distinct ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SiteCatalog {
    sites: Vec<Site>,
}

impl SiteCatalog {
    pub fn new(sites: Vec<Site>) -> Result<Self, CatalogError> {
        if sites.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut ids = HashSet::new();
        for s in &sites {
            if !ids.insert(s.site_id.as_str()) {
                return Err(CatalogError::DuplicateSite(s.site_id.clone()));
            }
            if !(s.buffer_km.is_finite() && s.buffer_km > 0.0) {
                return Err(CatalogError::InvalidBuffer(s.site_id.clone()));
            }
            if !s.center().is_valid() {
                return Err(CatalogError::InvalidCenter(s.site_id.clone()));
            }
        }
        Ok(SiteCatalog { sites })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let sites: Vec<Site> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::new(sites)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn site_ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.site_id.clone()).collect()
    }

    pub fn index_of(&self, site_id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.site_id == site_id)
    }

    pub fn get(&self, site_id: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }

    /// Site ids carrying the given ticket group, in catalog order.
    pub fn group_members(&self, group: TicketGroup) -> Vec<String> {
        self.sites
            .iter()
            .filter(|s| s.ticket_group == group)
            .map(|s| s.site_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

impl From<&PhotoRecord> for LatLon {
    fn from(p: &PhotoRecord) -> Self {
        LatLon::new(p.lat, p.lon)
    }
}

/// Great-circle distance by the haversine formula.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Point reached by travelling `distance_km` from `origin` along the initial
/// bearing `bearing_rad` (clockwise from north) on the sphere.
pub fn destination(origin: LatLon, bearing_rad: f64, distance_km: f64) -> LatLon {
    let delta = distance_km / EARTH_RADIUS_KM;
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lon.to_radians();
    let phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * bearing_rad.cos()).asin();
    let lambda2 = lambda1
        + (bearing_rad.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * phi2.sin());
    let lon = (lambda2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    LatLon::new(phi2.to_degrees(), lon)
}

/// Index of the nearest site whose buffer contains `p`; exact distance ties go
/// to the earlier catalog entry.
pub fn assign_point(p: LatLon, catalog: &SiteCatalog) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, site) in catalog.sites.iter().enumerate() {
        let d = haversine_km(p, site.center());
        if d <= site.buffer_km && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

pub fn assign_site<'c>(p: &PhotoRecord, catalog: &'c SiteCatalog) -> Option<&'c str> {
    assign_point(p.into(), catalog).map(|i| catalog.sites[i].site_id.as_str())
}

/// A photo paired with the site it was assigned to.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedPhoto {
    pub photo: PhotoRecord,
    pub site_id: String,
}

/// Records falling inside some site buffer, in input order.
pub fn filter_within_buffer(dataset: &Dataset, catalog: &SiteCatalog) -> Vec<AssignedPhoto> {
    dataset
        .records
        .iter()
        .filter_map(|r| {
            assign_site(r, catalog).map(|id| AssignedPhoto { photo: r.clone(), site_id: id.to_owned() })
        })
        .collect()
}
