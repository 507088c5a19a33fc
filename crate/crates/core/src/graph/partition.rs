//! Cover of a volume by disjoint connected blocks built around disjoint balls.
//!
//! Construction:
//! 1. `x_o` is the first volume vertex (in vertex order) whose `ℓ`-ball lies in
//!    the volume.
//! 2. Candidates at distance `2i(ℓ+1) - 1` from `x_o` are scanned in vertex
//!    order and accepted whenever their ball is disjoint from all balls chosen
//!    so far.
//! 3. A second scan over every remaining vertex whose ball fits completes the
//!    packing to a maximal one.
//! 4. Leftover vertices join the ball that is nearest inside the volume,
//!    ties going to the lowest ball index. Because the search runs inside the
//!    volume, every block stays connected.

use std::collections::{HashMap, HashSet, VecDeque};

use serde::Serialize;

use super::{Graph, GraphError, UNREACHED};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockHalves {
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub center_plus: usize,
    pub center_minus: usize,
    /// Largest `r` with `B(center_plus, r) ∩ Λ_i ⊆ plus`.
    pub radius_plus: u32,
    pub radius_minus: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    pub volume: Vec<usize>,
    pub ell: u32,
    pub blocks: Vec<Vec<usize>>,
    pub centers: Vec<usize>,
    /// No ball of radius `ℓ` fits; the whole volume is one block.
    pub degenerate: bool,
    /// Largest volume distance from a first-pass candidate outside the balls
    /// to the union of balls.
    pub candidate_gap: u32,
    /// Largest volume distance from any leftover vertex to the union of balls.
    pub leftover_gap: u32,
    pub halves: Option<Vec<BlockHalves>>,
    /// `ℓ < 4`: halves come from a plain balanced bisection.
    pub halves_small_ell: bool,
    #[serde(skip)]
    block_of: Vec<usize>,
}

/// Builds the block cover of `volume` (host vertex ids) at scale `ell`.
pub fn partition_cover(g: &Graph, volume: &[usize], ell: u32) -> Result<Partition, GraphError> {
    if volume.is_empty() {
        return Err(GraphError::EmptySet);
    }
    let mut volume = volume.to_vec();
    volume.sort_unstable();
    volume.dedup();
    if let Some(&bad) = volume.iter().find(|&&v| v >= g.vertex_count()) {
        return Err(GraphError::VertexOutOfRange(bad));
    }
    if !g.is_connected_subset(&volume) {
        return Err(GraphError::SetDisconnected);
    }
    let mut inside = vec![false; g.vertex_count()];
    for &v in &volume {
        inside[v] = true;
    }
    let fits: Vec<bool> = volume
        .iter()
        .map(|&v| ell >= 1 && g.ball(v, ell).iter().all(|&y| inside[y]))
        .collect();

    let Some(first) = fits.iter().position(|&f| f) else {
        let mut block_of = vec![usize::MAX; g.vertex_count()];
        for &v in &volume {
            block_of[v] = 0;
        }
        return Ok(Partition {
            centers: vec![volume[0]],
            blocks: vec![volume.clone()],
            volume,
            ell,
            degenerate: true,
            candidate_gap: 0,
            leftover_gap: 0,
            halves: None,
            halves_small_ell: false,
            block_of,
        });
    };
    let x_o = volume[first];

    // owner[v] = index of the chosen ball containing v
    let mut owner = vec![usize::MAX; g.vertex_count()];
    let mut centers = Vec::new();
    let try_center = |c: usize, owner: &mut Vec<usize>, centers: &mut Vec<usize>| {
        let ball = g.ball(c, ell);
        if ball.iter().all(|&y| owner[y] == usize::MAX) {
            for y in ball {
                owner[y] = centers.len();
            }
            centers.push(c);
        }
    };
    try_center(x_o, &mut owner, &mut centers);

    let from_o = g.distances_from(x_o);
    let step = 2 * (ell + 1);
    let candidates: Vec<usize> = volume
        .iter()
        .zip(&fits)
        .filter(|&(&v, &f)| f && from_o[v] != UNREACHED && (from_o[v] + 1).is_multiple_of(step))
        .map(|(&v, _)| v)
        .collect();
    for &c in &candidates {
        try_center(c, &mut owner, &mut centers);
    }
    let first_pass_balls = centers.len();
    for (&v, &f) in volume.iter().zip(&fits) {
        if f {
            try_center(v, &mut owner, &mut centers);
        }
    }

    // Multi-source BFS inside the volume, labelled by (distance, ball index).
    let mut dist = vec![UNREACHED; g.vertex_count()];
    let mut label = vec![usize::MAX; g.vertex_count()];
    let mut queue = VecDeque::new();
    for &v in &volume {
        if owner[v] != usize::MAX {
            dist[v] = 0;
            label[v] = owner[v];
            queue.push_back(v);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbors(u) {
            if !inside[w] {
                continue;
            }
            let d = dist[u] + 1;
            if dist[w] == UNREACHED {
                dist[w] = d;
                label[w] = label[u];
                queue.push_back(w);
            } else if dist[w] == d && label[u] < label[w] {
                label[w] = label[u];
            }
        }
    }
    // Ties at equal distance may be relabelled after w was expanded, so
    // settle labels layer by layer.
    let mut order: Vec<usize> = volume.clone();
    order.sort_by_key(|&v| dist[v]);
    for &v in &order {
        if dist[v] == 0 {
            continue;
        }
        let best = g
            .neighbors(v)
            .iter()
            .filter(|&&w| inside[w] && dist[w] + 1 == dist[v])
            .map(|&w| label[w])
            .min()
            .expect("BFS parent exists");
        label[v] = best;
    }

    let mut blocks = vec![Vec::new(); centers.len()];
    let mut block_of = vec![usize::MAX; g.vertex_count()];
    for &v in &volume {
        blocks[label[v]].push(v);
        block_of[v] = label[v];
    }

    // The first-pass ball union is only used for the candidate gap report.
    let union_first: Vec<usize> = volume
        .iter()
        .copied()
        .filter(|&v| owner[v] != usize::MAX && owner[v] < first_pass_balls)
        .collect();
    let gap_first = volume_distance_to(g, &inside, &union_first);
    let candidate_gap = candidates
        .iter()
        .filter(|&&c| owner[c] == usize::MAX || owner[c] >= first_pass_balls)
        .map(|&c| gap_first[c])
        .max()
        .unwrap_or(0);
    let leftover_gap = volume.iter().map(|&v| dist[v]).max().unwrap_or(0);

    Ok(Partition {
        volume,
        ell,
        blocks,
        centers,
        degenerate: false,
        candidate_gap,
        leftover_gap,
        halves: None,
        halves_small_ell: false,
        block_of,
    })
}

fn volume_distance_to(g: &Graph, inside: &[bool], sources: &[usize]) -> Vec<u32> {
    let mut dist = vec![UNREACHED; g.vertex_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        dist[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        for &w in g.neighbors(u) {
            if inside[w] && dist[w] == UNREACHED {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

impl Partition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block index of a host vertex, if it lies in the volume.
    pub fn block_of(&self, v: usize) -> Option<usize> {
        self.block_of.get(v).copied().filter(|&b| b != usize::MAX)
    }

    pub fn min_block_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Lists every violated structural invariant; empty means valid.
    pub fn violations(&self, g: &Graph) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen = vec![0usize; g.vertex_count()];
        for block in &self.blocks {
            for &v in block {
                seen[v] += 1;
            }
        }
        for &v in &self.volume {
            if seen[v] != 1 {
                out.push(format!("vertex {v} covered {} times", seen[v]));
            }
        }
        let covered: usize = self.blocks.iter().map(Vec::len).sum();
        if covered != self.volume.len() {
            out.push(format!("blocks cover {covered} of {} vertices", self.volume.len()));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            if !g.is_connected_subset(block) {
                out.push(format!("block {i} is disconnected"));
            }
            if self.degenerate {
                continue;
            }
            let c = self.centers[i];
            if g.ball(c, self.ell).iter().any(|v| block.binary_search(v).is_err()) {
                out.push(format!("block {i} misses part of B(x_{i}, ℓ)"));
            }
            let row = g.distances_from(c);
            if block.iter().any(|&v| row[v] > 3 * self.ell) {
                out.push(format!("block {i} leaves B(x_{i}, 3ℓ)"));
            }
        }
        if let Some(halves) = &self.halves {
            let r = self.ell / 4;
            for (i, h) in halves.iter().enumerate() {
                if !g.is_connected_subset(&h.plus) || !g.is_connected_subset(&h.minus) {
                    out.push(format!("block {i} has a disconnected half"));
                }
                if h.radius_plus < r || h.radius_minus < r {
                    out.push(format!("block {i} half certificate below ⌊ℓ/4⌋"));
                }
            }
        }
        out
    }

    /// Splits every block into two connected halves with certified centres.
    pub fn halve_blocks(&self, g: &Graph) -> Result<Partition, GraphError> {
        let mut halves = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            halves.push(halve_block(g, block, self.centers[i], self.ell / 4).ok_or(GraphError::UnsplittableBlock(i))?);
        }
        let mut out = self.clone();
        out.halves = Some(halves);
        out.halves_small_ell = self.ell < 4;
        Ok(out)
    }
}

/// BFS from `from` through vertices accepted by `allowed`, touching only what
/// it reaches.
fn local_bfs(g: &Graph, from: usize, allowed: impl Fn(usize) -> bool) -> HashMap<usize, u32> {
    let mut dist = HashMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let du = dist[&u];
        for &v in g.neighbors(u) {
            if allowed(v) && !dist.contains_key(&v) {
                dist.insert(v, du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn halve_block(g: &Graph, block: &[usize], center: usize, want: u32) -> Option<BlockHalves> {
    if block.len() < 2 {
        return None;
    }
    let inside: HashSet<usize> = block.iter().copied().collect();
    let induced = |from: usize| local_bfs(g, from, |v| inside.contains(&v));
    let farthest = |row: &HashMap<usize, u32>| {
        block
            .iter()
            .copied()
            .max_by(|&x, &y| row[&x].cmp(&row[&y]).then(y.cmp(&x)))
            .expect("block is non-empty")
    };
    let a = farthest(&induced(center));
    let da = induced(a);
    let b = farthest(&da);
    let db = induced(b);

    // two-source Voronoi split inside the block; ties go to `a`
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for &v in block {
        if da[&v] <= db[&v] {
            plus.push(v);
        } else {
            minus.push(v);
        }
    }
    let plus_center = certified_center(g, &inside, &plus, want);
    let minus_center = certified_center(g, &inside, &minus, want);
    Some(BlockHalves {
        center_plus: plus_center.0,
        radius_plus: plus_center.1,
        center_minus: minus_center.0,
        radius_minus: minus_center.1,
        plus,
        minus,
    })
}

/// Picks the centre of `half` (minimum eccentricity inside it) and returns
/// the largest `r` with `B(c, r) ∩ block ⊆ half`. If that falls short of
/// `want`, every vertex of the half is tried.
fn certified_center(g: &Graph, block: &HashSet<usize>, half: &[usize], want: u32) -> (usize, u32) {
    let in_half: HashSet<usize> = half.iter().copied().collect();
    // host distance from `c` to the nearest block vertex outside the half, minus one
    let radius_at = |c: usize| -> u32 {
        let mut dist = HashMap::from([(c, 0u32)]);
        let mut queue = VecDeque::from([c]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for &v in g.neighbors(u) {
                if dist.contains_key(&v) {
                    continue;
                }
                if block.contains(&v) && !in_half.contains(&v) {
                    return du;
                }
                dist.insert(v, du + 1);
                queue.push_back(v);
            }
        }
        u32::MAX
    };
    let eccentricity = |c: usize| -> u32 {
        let row = local_bfs(g, c, |v| in_half.contains(&v));
        half.iter().map(|v| row[v]).max().unwrap_or(0)
    };
    let c = *half
        .iter()
        .min_by_key(|&&v| (eccentricity(v), v))
        .expect("half is non-empty");
    let r = radius_at(c);
    if r >= want {
        return (c, r);
    }
    half.iter()
        .map(|&v| (v, radius_at(v)))
        .max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0)))
        .expect("half is non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all(g: &Graph) -> Vec<usize> {
        (0..g.vertex_count()).collect()
    }

    #[test]
    fn single_ball_volume_is_one_block() {
        let g = Graph::lattice(&[15, 15], false).unwrap();
        let c = g.vertex_at(&[7, 7]);
        let vol = g.ball(c, 3);
        let p = partition_cover(&g, &vol, 3).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.blocks[0], vol);
        assert!(!p.degenerate);
    }

    #[test]
    fn segment_blocks_respect_containment() {
        let g = Graph::path(20).unwrap();
        let p = partition_cover(&g, &all(&g), 2).unwrap();
        assert!(p.violations(&g).is_empty(), "{:?}", p.violations(&g));
        for (i, block) in p.blocks.iter().enumerate() {
            let row = g.distances_from(p.centers[i]);
            assert!(g.ball(p.centers[i], 2).iter().all(|v| block.contains(v)));
            assert!(block.iter().all(|&v| row[v] <= 6));
        }
    }

    #[test]
    fn z2_ball_leftovers_are_close() {
        let g = Graph::lattice(&[29, 29], false).unwrap();
        let vol = g.ball(g.vertex_at(&[14, 14]), 12);
        let p = partition_cover(&g, &vol, 2).unwrap();
        assert!(p.violations(&g).is_empty(), "{:?}", p.violations(&g));
        assert!(p.candidate_gap <= 3, "candidate gap {}", p.candidate_gap);
        assert!(p.leftover_gap <= 3, "leftover gap {}", p.leftover_gap);
    }

    #[test]
    fn too_large_ell_is_degenerate() {
        let g = Graph::path(5).unwrap();
        let vol = vec![1, 2, 3];
        let p = partition_cover(&g, &vol, 2).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.blocks, vec![vol]);
    }

    #[test]
    fn path_of_eight_halves() {
        let g = Graph::path(8).unwrap();
        let p = Partition {
            volume: all(&g),
            ell: 4,
            blocks: vec![all(&g)],
            centers: vec![3],
            degenerate: false,
            candidate_gap: 0,
            leftover_gap: 0,
            halves: None,
            halves_small_ell: false,
            block_of: vec![0; 8],
        };
        let h = p.halve_blocks(&g).unwrap();
        let halves = &h.halves.as_ref().unwrap()[0];
        let mut sides = [halves.plus.clone(), halves.minus.clone()];
        sides.sort();
        assert_eq!(sides[0], vec![0, 1, 2, 3]);
        assert_eq!(sides[1], vec![4, 5, 6, 7]);
        let mut cs = [halves.center_plus, halves.center_minus];
        cs.sort();
        assert_eq!(cs, [1, 5]);
        assert!(halves.radius_plus >= 1 && halves.radius_minus >= 1);
    }

    #[test]
    fn single_vertex_block_is_unsplittable() {
        let g = Graph::path(3).unwrap();
        let p = partition_cover(&g, &[1], 1).unwrap();
        assert!(p.degenerate);
        assert_eq!(p.halve_blocks(&g), Err(GraphError::UnsplittableBlock(0)));
    }

    #[test]
    fn z2_ball_bisection_is_balanced() {
        let g = Graph::lattice(&[11, 11], false).unwrap();
        let vol = g.ball(g.vertex_at(&[5, 5]), 3);
        let p = partition_cover(&g, &vol, 3).unwrap().halve_blocks(&g).unwrap();
        let h = &p.halves.as_ref().unwrap()[0];
        assert!(g.is_connected_subset(&h.plus) && g.is_connected_subset(&h.minus));
        let (a, b) = (h.plus.len(), h.minus.len());
        assert_eq!(a + b, 25);
        assert!(a.max(b) <= 3 * a.min(b), "sizes {a} / {b}");
        assert!(p.halves_small_ell);
    }

    #[test]
    fn deterministic() {
        let g = Graph::lattice(&[17, 13], false).unwrap();
        let a = partition_cover(&g, &all(&g), 2).unwrap();
        let b = partition_cover(&g, &all(&g), 2).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn segment_partitions_are_valid(n in 3usize..60, ell in 1u32..6) {
            let g = Graph::path(n).unwrap();
            let p = partition_cover(&g, &all(&g), ell).unwrap();
            if !p.degenerate {
                prop_assert!(p.violations(&g).is_empty(), "{:?}", p.violations(&g));
            }
        }

        #[test]
        fn box_partitions_are_valid(w in 3usize..16, h in 3usize..16, ell in 1u32..4) {
            let g = Graph::lattice(&[w, h], false).unwrap();
            let p = partition_cover(&g, &all(&g), ell).unwrap();
            if !p.degenerate {
                prop_assert!(p.violations(&g).is_empty(), "{:?}", p.violations(&g));
                prop_assert!(p.candidate_gap < 2 * ell);
                if ell >= 4 {
                    let halved = p.halve_blocks(&g).unwrap();
                    prop_assert!(halved.violations(&g).is_empty());
                }
            }
        }

        #[test]
        fn torus_ball_partitions_are_valid(r in 3u32..9, ell in 1u32..4) {
            let side = 2 * r as usize + 3;
            let g = Graph::lattice(&[side, side], true).unwrap();
            let vol = g.ball(0, r);
            let p = partition_cover(&g, &vol, ell).unwrap();
            if !p.degenerate {
                prop_assert!(p.violations(&g).is_empty(), "{:?}", p.violations(&g));
            }
        }

        #[test]
        fn large_ell_segment_halves(n in 9usize..80, ell in 4u32..9) {
            let g = Graph::path(n).unwrap();
            let p = partition_cover(&g, &all(&g), ell).unwrap();
            if !p.degenerate {
                let halved = p.halve_blocks(&g).unwrap();
                prop_assert!(halved.violations(&g).is_empty(), "{:?}", halved.violations(&g));
            }
        }
    }
}
