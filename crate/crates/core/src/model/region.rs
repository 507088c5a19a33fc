use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::graph::Graph;

/// Finite volume `Λ` inside a host graph, with precomputed neighbour slots.
///
/// Sites are host vertices sorted by id; the local index of a site is its
/// position in that list. Exterior vertices within host distance 2 form the
/// halo. Neighbour lists are stored as *slots*: a slot `s < n` is the site
/// with local index `s`, a slot `n + j` is halo vertex `j`. This lets the
/// dynamics keep one flat state vector `[sites | halo]`.
#[derive(Debug)]
pub struct Volume {
    host: Arc<Graph>,
    sites: Vec<usize>,
    local_of: Vec<u32>,
    slot_of: Vec<u32>,
    halo: Vec<usize>,
    halo_depth: Vec<u8>,
    nbr1: Csr,
    nbr2: Csr,
}

#[derive(Debug, Default)]
struct Csr {
    offsets: Vec<u32>,
    slots: Vec<u32>,
}

impl Csr {
    fn row(&self, i: usize) -> &[u32] {
        &self.slots[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

const NOT_LOCAL: u32 = u32::MAX;

impl Volume {
    /// Volume made of the given host vertices; they must induce a connected
    /// subgraph.
    pub fn new(host: Arc<Graph>, sites: &[usize]) -> Result<Self, ModelError> {
        let mut sites = sites.to_vec();
        sites.sort_unstable();
        sites.dedup();
        if sites.is_empty() {
            return Err(ModelError::EmptyVolume);
        }
        if let Some(&v) = sites.iter().find(|&&v| v >= host.vertex_count()) {
            return Err(ModelError::SiteOutOfRange(v));
        }
        if !host.is_connected_subset(&sites) {
            return Err(ModelError::DisconnectedVolume);
        }
        let mut local_of = vec![NOT_LOCAL; host.vertex_count()];
        for (i, &v) in sites.iter().enumerate() {
            local_of[v] = i as u32;
        }

        // exterior vertices within distance 2, ordered by (depth, id)
        let mut depth = vec![0u8; host.vertex_count()];
        let mut layer1: Vec<usize> = host.outer_boundary(&sites);
        for &y in &layer1 {
            depth[y] = 1;
        }
        let mut layer2: Vec<usize> = layer1
            .iter()
            .flat_map(|&y| host.neighbors(y).iter().copied())
            .filter(|&w| local_of[w] == NOT_LOCAL && depth[w] == 0)
            .collect();
        layer2.sort_unstable();
        layer2.dedup();
        for &y in &layer2 {
            depth[y] = 2;
        }
        let mut halo = std::mem::take(&mut layer1);
        halo.extend_from_slice(&layer2);
        let halo_depth: Vec<u8> = halo.iter().map(|&y| depth[y]).collect();

        let n = sites.len();
        let mut slot_of = vec![NOT_LOCAL; host.vertex_count()];
        for (i, &v) in sites.iter().enumerate() {
            slot_of[v] = i as u32;
        }
        for (j, &v) in halo.iter().enumerate() {
            slot_of[v] = (n + j) as u32;
        }

        let mut nbr1 = Csr {
            offsets: vec![0],
            ..Csr::default()
        };
        let mut nbr2 = Csr {
            offsets: vec![0],
            ..Csr::default()
        };
        for &x in &sites {
            let mut ring1: Vec<u32> = host.neighbors(x).iter().map(|&y| slot_of[y]).collect();
            ring1.sort_unstable();
            nbr1.slots.extend_from_slice(&ring1);
            nbr1.offsets.push(nbr1.slots.len() as u32);

            let mut ball2: Vec<u32> = host
                .ball(x, 2)
                .into_iter()
                .filter(|&y| y != x)
                .map(|y| slot_of[y])
                .collect();
            ball2.sort_unstable();
            nbr2.slots.extend_from_slice(&ball2);
            nbr2.offsets.push(nbr2.slots.len() as u32);
        }
        debug_assert!(nbr1.slots.iter().chain(&nbr2.slots).all(|&s| s != NOT_LOCAL));

        Ok(Self {
            host,
            sites,
            local_of,
            slot_of,
            halo,
            halo_depth,
            nbr1,
            nbr2,
        })
    }

    /// The whole host graph as the volume (no exterior).
    pub fn whole(host: Arc<Graph>) -> Self {
        let sites: Vec<usize> = (0..host.vertex_count()).collect();
        Self::new(host, &sites).expect("host graphs are connected")
    }

    /// Open box with the given sides, embedded in a frame of width 2 so the
    /// boundary condition is felt by every constraint. Local indices follow
    /// row-major order of `dims`.
    pub fn lattice_box(dims: &[usize]) -> Result<Self, ModelError> {
        if dims.is_empty() {
            return Err(ModelError::Graph(crate::graph::GraphError::ZeroDimensional));
        }
        let framed: Vec<usize> = dims.iter().map(|d| d + 4).collect();
        let host = Graph::lattice(&framed, false).map_err(ModelError::Graph)?;
        let mut sites = Vec::with_capacity(dims.iter().product());
        let mut coords = vec![0usize; dims.len()];
        let total: usize = dims.iter().product();
        for _ in 0..total {
            let shifted: Vec<usize> = coords.iter().map(|c| c + 2).collect();
            sites.push(host.vertex_at(&shifted));
            for axis in (0..dims.len()).rev() {
                coords[axis] += 1;
                if coords[axis] < dims[axis] {
                    break;
                }
                coords[axis] = 0;
            }
        }
        Self::new(Arc::new(host), &sites)
    }

    /// Graph-distance ball of radius `r` around the centre of a framed
    /// lattice in `dim` dimensions. Returns the volume and the host id of
    /// the centre.
    pub fn lattice_ball(dim: usize, r: usize) -> Result<(Self, usize), ModelError> {
        if dim == 0 {
            return Err(ModelError::Graph(crate::graph::GraphError::ZeroDimensional));
        }
        let host = Graph::lattice(&vec![2 * r + 5; dim], false).map_err(ModelError::Graph)?;
        let centre = host.vertex_at(&vec![r + 2; dim]);
        let sites = host.ball(centre, r as u32);
        Ok((Self::new(Arc::new(host), &sites)?, centre))
    }

    /// Open segment of `n` sites with a framed exterior.
    pub fn segment(n: usize) -> Result<Self, ModelError> {
        Self::lattice_box(&[n])
    }

    /// Periodic torus; the volume is the whole graph.
    pub fn torus(dims: &[usize]) -> Result<Self, ModelError> {
        let host = Graph::lattice(dims, true).map_err(ModelError::Graph)?;
        Ok(Self::whole(Arc::new(host)))
    }

    pub fn host(&self) -> &Arc<Graph> {
        &self.host
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Host ids of the sites, in local order.
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn site(&self, local: usize) -> usize {
        self.sites[local]
    }

    pub fn local_of(&self, host_vertex: usize) -> Option<usize> {
        self.local_of
            .get(host_vertex)
            .copied()
            .filter(|&i| i != NOT_LOCAL)
            .map(|i| i as usize)
    }

    /// Slot of a host vertex in `Λ` or the halo.
    pub fn slot_of(&self, host_vertex: usize) -> Option<usize> {
        self.slot_of
            .get(host_vertex)
            .copied()
            .filter(|&i| i != NOT_LOCAL)
            .map(|i| i as usize)
    }

    /// Exterior vertices within host distance 2, depth-1 ones first.
    pub fn halo(&self) -> &[usize] {
        &self.halo
    }

    /// `∂Λ`: exterior vertices adjacent to the volume.
    pub fn boundary(&self) -> &[usize] {
        let k = self.halo_depth.iter().take_while(|&&d| d == 1).count();
        &self.halo[..k]
    }

    pub fn halo_depth(&self, j: usize) -> u8 {
        self.halo_depth[j]
    }

    /// Slots of the host neighbours of local site `x`.
    pub fn neighbor_slots(&self, x: usize) -> &[u32] {
        self.nbr1.row(x)
    }

    /// Slots of vertices at host distance 1 or 2 from local site `x`.
    pub fn ball2_slots(&self, x: usize) -> &[u32] {
        self.nbr2.row(x)
    }

    /// Host vertex behind a slot.
    pub fn slot_vertex(&self, slot: usize) -> usize {
        if slot < self.sites.len() {
            self.sites[slot]
        } else {
            self.halo[slot - self.sites.len()]
        }
    }

    /// Local indices of sites within host distance `r` of local site `x`.
    pub fn local_ball(&self, x: usize, r: u32) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .host
            .ball(self.sites[x], r)
            .into_iter()
            .filter_map(|v| self.local_of(v))
            .collect();
        out.sort_unstable();
        out
    }

    /// Host distance from local site `x` to the exterior, `None` without one.
    pub fn distance_to_exterior(&self, x: usize) -> Option<u32> {
        let row = self.host.distances_from(self.sites[x]);
        self.boundary().iter().map(|&y| row[y]).min()
    }
}

/// Exterior condition `η_{Λ^c}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Empty,
    Filled,
    /// All filled except the given host vertex, which must lie on `∂Λ`.
    FilledExceptAt(usize),
    /// Host vertex → value. Must cover `∂Λ`; unlisted depth-2 vertices are
    /// filled.
    Explicit(BTreeMap<usize, u8>),
}

/// A volume together with a resolved exterior configuration.
#[derive(Debug)]
pub struct Region {
    volume: Arc<Volume>,
    bc: BoundaryCondition,
    exterior: Vec<u8>,
}

impl Region {
    pub fn new(volume: Arc<Volume>, bc: BoundaryCondition) -> Result<Self, ModelError> {
        let halo = volume.halo();
        let exterior = match &bc {
            BoundaryCondition::Empty => vec![0; halo.len()],
            BoundaryCondition::Filled => vec![1; halo.len()],
            BoundaryCondition::FilledExceptAt(z) => {
                if !volume.boundary().contains(z) {
                    return Err(ModelError::NotOnBoundary(*z));
                }
                halo.iter().map(|y| u8::from(y != z)).collect()
            }
            BoundaryCondition::Explicit(map) => {
                if let Some((&v, _)) = map.iter().find(|(_, &val)| val > 1) {
                    return Err(ModelError::BadOccupation(v));
                }
                if let Some(&y) = volume.boundary().iter().find(|y| !map.contains_key(y)) {
                    return Err(ModelError::MissingBoundaryValue(y));
                }
                if let Some(&v) = map.keys().find(|v| !halo.contains(v)) {
                    return Err(ModelError::NotOnBoundary(v));
                }
                halo.iter().map(|y| map.get(y).copied().unwrap_or(1)).collect()
            }
        };
        Ok(Self {
            volume,
            bc,
            exterior,
        })
    }

    pub fn volume(&self) -> &Arc<Volume> {
        &self.volume
    }

    pub fn boundary_condition(&self) -> &BoundaryCondition {
        &self.bc
    }

    /// Values on the halo, in halo order.
    pub fn exterior(&self) -> &[u8] {
        &self.exterior
    }

    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    /// Flat state vector `[occ | exterior]` indexed by slot.
    pub fn extended(&self, occ: &[u8]) -> Vec<u8> {
        let mut ext = Vec::with_capacity(occ.len() + self.exterior.len());
        ext.extend_from_slice(occ);
        ext.extend_from_slice(&self.exterior);
        ext
    }

    /// Value of a host vertex given the occupation on `Λ`; vertices beyond
    /// the halo count as filled.
    pub fn host_value(&self, occ: &[u8], v: usize) -> u8 {
        match self.volume.slot_of(v) {
            Some(s) if s < occ.len() => occ[s],
            Some(s) => self.exterior[s - occ.len()],
            None => match self.bc {
                BoundaryCondition::Empty => 0,
                _ => 1,
            },
        }
    }
}
