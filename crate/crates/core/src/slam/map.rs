//! Map extraction: point landmarks, and a reflector plane per
//! (source, image) pair.

use serde::{Deserialize, Serialize};

use super::tracker::{StreamId, StreamStatus};
use crate::environment::{Plane, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Scatterer,
    Ris,
    VirtualScatterer,
    VirtualRis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLandmark {
    pub id: StreamId,
    pub position: Vec3,
    pub kind: MapKind,
    pub source: Option<StreamId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectorEstimate {
    /// Normal points toward the source side.
    pub plane: Plane,
    pub source: StreamId,
    pub image: StreamId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatedMap {
    pub landmarks: Vec<MapLandmark>,
    pub reflectors: Vec<ReflectorEstimate>,
    pub ris: Option<Vec3>,
    /// Virtual landmarks whose source is not in the map.
    pub unpaired: Vec<StreamId>,
}

/// Perpendicular bisector of a source and its mirror image.
pub fn bisector_plane(source: &Vec3, image: &Vec3) -> Option<Plane> {
    Plane::new((source + image) * 0.5, source - image).ok()
}

/// `landmarks` holds (id, position, status) of the filter's landmarks;
/// `ris` is the landmark currently believed to be the RIS.
pub fn build_map(
    landmarks: &[(StreamId, Vec3, StreamStatus)],
    ris: Option<StreamId>,
) -> EstimatedMap {
    let mut map = EstimatedMap::default();
    let position_of = |id: StreamId| {
        landmarks
            .iter()
            .find(|l| l.0 == id && l.2 == StreamStatus::Point)
            .map(|l| l.1)
    };
    for &(id, position, status) in landmarks {
        match status {
            StreamStatus::Point => {
                let is_ris = ris == Some(id);
                if is_ris {
                    map.ris = Some(position);
                }
                map.landmarks.push(MapLandmark {
                    id,
                    position,
                    kind: if is_ris {
                        MapKind::Ris
                    } else {
                        MapKind::Scatterer
                    },
                    source: None,
                });
            }
            StreamStatus::Virtual { source } => {
                let kind = if ris == Some(source) {
                    MapKind::VirtualRis
                } else {
                    MapKind::VirtualScatterer
                };
                map.landmarks.push(MapLandmark {
                    id,
                    position,
                    kind,
                    source: Some(source),
                });
                match position_of(source).and_then(|s| bisector_plane(&s, &position)) {
                    Some(plane) => map.reflectors.push(ReflectorEstimate {
                        plane,
                        source,
                        image: id,
                    }),
                    None => map.unpaired.push(id),
                }
            }
            _ => {}
        }
    }
    map
}
