//! Exact nearest-neighbour search over a static point set.
//!
//! The tree is built once per cloud and queried many times. Queries are
//! exact, and equidistant candidates resolve to the lowest point index so that
//! every caller sees the same answer a linear scan would give.

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 8;

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

/// Balanced k-d tree with median splits on the axis of widest spread.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // permutation of point indices; leaves own contiguous ranges
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[inline]
fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

struct Best {
    dist_sq: f64,
    index: usize,
}

impl Best {
    #[inline]
    fn offer(&mut self, d2: f64, index: usize) {
        if d2 < self.dist_sq || (d2 == self.dist_sq && index < self.index) {
            self.dist_sq = d2;
            self.index = index;
        }
    }
}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Self {
        let points: Vec<[f64; 3]> = cloud.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut tree = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = tree.points.len();
        tree.build_range(0, n);
        tree
    }

    /// Same as [`KdTree::build`] but returns an error for an empty point list.
    pub fn try_build(points: &[Point3]) -> Result<Self> {
        Ok(Self::build(&PointCloud::new(points.to_vec())?))
    }

    fn build_range(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_range(start, mid);
        let right = self.build_range(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and Euclidean distance of the point nearest to `query`.
    pub fn nearest(&self, query: &Point3) -> Result<(usize, f64)> {
        if !query.coords.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite query point".into()));
        }
        Ok(self.nearest_unchecked(query))
    }

    /// [`KdTree::nearest`] without the finiteness check on `query`.
    pub fn nearest_unchecked(&self, query: &Point3) -> (usize, f64) {
        let best = self.search(&[query.x, query.y, query.z], None);
        (best.index, best.dist_sq.sqrt())
    }

    /// Nearest point other than the one stored at `exclude`; `None` when the
    /// tree holds a single point.
    pub fn nearest_excluding(&self, query: &Point3, exclude: usize) -> Option<(usize, f64)> {
        if self.points.len() < 2 {
            return None;
        }
        let best = self.search(&[query.x, query.y, query.z], Some(exclude));
        Some((best.index, best.dist_sq.sqrt()))
    }

    fn search(&self, q: &[f64; 3], exclude: Option<usize>) -> Best {
        let mut best = Best {
            dist_sq: f64::INFINITY,
            index: usize::MAX,
        };
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((node, bound)) = stack.pop() {
            // `bound` is a lower bound on the distance to anything under `node`;
            // equality must still be explored for the index tie-break
            if bound > best.dist_sq {
                continue;
            }
            match self.nodes[node] {
                Node::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        if Some(i) == exclude {
                            continue;
                        }
                        best.offer(dist_sq(q, &self.points[i]), i);
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
                    stack.push((far, bound.max(diff * diff)));
                    stack.push((near, bound));
                }
            }
        }
        best
    }
}
