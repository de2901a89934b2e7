use super::{Point, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// One k-NN answer: the index of the point in the indexed cloud and its
/// squared Euclidean distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    #[inline]
    fn precedes(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact k-nearest-neighbour index over a point set.
///
/// Results are identical to a brute-force scan sorted by
/// `(squared distance, point index)`: equal distances resolve to the lowest
/// index. The index is immutable once built.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    coords: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl SpatialIndex {
    pub fn build(pc: &PointCloud) -> Result<Self> {
        pc.ensure_non_empty("indexed cloud")?;
        Ok(Self::from_coords(
            pc.points().iter().map(Point::coords).collect(),
        ))
    }

    /// Builds directly from raw coordinates. Panics on an empty slice.
    pub(crate) fn from_coords(coords: Vec<[f64; 3]>) -> Self {
        assert!(!coords.is_empty(), "spatial index needs at least one point");
        let mut order: Vec<usize> = (0..coords.len()).collect();
        let mut nodes = Vec::with_capacity(2 * coords.len() / LEAF_SIZE + 1);
        build_node(&coords, &mut order, 0, coords.len(), &mut nodes);
        Self {
            coords,
            order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// The `k` nearest indexed points to `q`, ascending by distance.
    pub fn nearest_neighbors(&self, q: &Point, k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.len()
            )));
        }
        let mut best = Vec::with_capacity(k + 1);
        self.search(0, &q.coords(), k, &mut best);
        Ok(best)
    }

    /// The single nearest indexed point.
    pub fn nearest(&self, q: &Point) -> Neighbor {
        let mut best = Vec::with_capacity(2);
        self.search(0, &q.coords(), 1, &mut best);
        best[0]
    }

    fn search(&self, node: usize, q: &[f64; 3], k: usize, best: &mut Vec<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let c = self.coords[index];
                    let d = [c[0] - q[0], c[1] - q[1], c[2] - q[2]];
                    let cand = Neighbor {
                        index,
                        dist2: d[0] * d[0] + d[1] * d[1] + d[2] * d[2],
                    };
                    offer(best, k, cand);
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, best);
                // `<=` so that equal-distance points with a lower index are
                // still found on the far side.
                if best.len() < k || diff * diff <= best[best.len() - 1].dist2 {
                    self.search(far, q, k, best);
                }
            }
        }
    }
}

fn offer(best: &mut Vec<Neighbor>, k: usize, cand: Neighbor) {
    if best.len() == k && !cand.precedes(&best[k - 1]) {
        return;
    }
    let pos = best.partition_point(|b| b.precedes(&cand));
    best.insert(pos, cand);
    best.truncate(k);
}

fn build_node(
    coords: &[[f64; 3]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return id;
    }

    let slice = &mut order[start..end];
    let mut lo = coords[slice[0]];
    let mut hi = lo;
    for &i in slice.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(coords[i][a]);
            hi[a] = hi[a].max(coords[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    if hi[axis] == lo[axis] {
        // All points coincide.
        nodes.push(Node::Leaf { start, end });
        return id;
    }

    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        coords[a][axis].total_cmp(&coords[b][axis]).then(a.cmp(&b))
    });
    let value = coords[slice[mid]][axis];

    nodes.push(Node::Leaf { start, end });
    let left = build_node(coords, order, start, start + mid, nodes);
    let right = build_node(coords, order, start + mid, end, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}
