//! Breadth-first search on the tile grid.

use std::collections::VecDeque;

use super::{Dir, Pos};

/// First step and length of a shortest path from `from` to the nearest tile
/// satisfying `is_target`. Neighbours expand in N, S, W, E order, which fixes
/// tie-breaking. Returns `None` if no target is reachable or `from` itself
/// is a target.
pub fn first_step(
    size: usize,
    from: Pos,
    passable: impl Fn(Pos) -> bool,
    is_target: impl Fn(Pos) -> bool,
) -> Option<(Dir, usize)> {
    let n = size as i32;
    if is_target(from) {
        return None;
    }
    let idx = |p: Pos| (p.y * n + p.x) as usize;
    let mut first: Vec<Option<(Dir, usize)>> = vec![None; size * size];
    let mut seen = vec![false; size * size];
    seen[idx(from)] = true;
    let mut queue = VecDeque::new();
    queue.push_back(from);
    while let Some(p) = queue.pop_front() {
        for dir in Dir::ALL {
            let q = p.step(dir);
            if q.x < 0 || q.y < 0 || q.x >= n || q.y >= n || seen[idx(q)] {
                continue;
            }
            seen[idx(q)] = true;
            let (d0, dist) = match first[idx(p)] {
                Some((d0, dist)) => (d0, dist + 1),
                None => (dir, 1),
            };
            if is_target(q) {
                return Some((d0, dist));
            }
            if passable(q) {
                first[idx(q)] = Some((d0, dist));
                queue.push_back(q);
            }
        }
    }
    None
}

/// Number of tiles reachable from `from` (including it).
pub fn reachable_count(size: usize, from: Pos, passable: impl Fn(Pos) -> bool) -> usize {
    let n = size as i32;
    let idx = |p: Pos| (p.y * n + p.x) as usize;
    let mut seen = vec![false; size * size];
    seen[idx(from)] = true;
    let mut queue = VecDeque::from([from]);
    let mut count = 1;
    while let Some(p) = queue.pop_front() {
        for dir in Dir::ALL {
            let q = p.step(dir);
            if q.x < 0 || q.y < 0 || q.x >= n || q.y >= n || seen[idx(q)] || !passable(q) {
                continue;
            }
            seen[idx(q)] = true;
            count += 1;
            queue.push_back(q);
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn open_grid_manhattan() {
        let from = Pos::new(0, 0);
        let target = Pos::new(3, 2);
        let (dir, dist) = first_step(5, from, |_| true, |p| p == target).unwrap();
        assert_eq!(dist, 5);
        // South expands before East.
        assert_eq!(dir, Dir::South);
    }

    #[test]
    fn routes_around_walls() {
        let wall = |p: Pos| p.x == 1 && p.y < 4;
        let (dir, dist) = first_step(5, Pos::new(0, 0), |p| !wall(p), |p| p == Pos::new(2, 0)).unwrap();
        assert_eq!(dir, Dir::South);
        assert_eq!(dist, 10);
        assert_eq!(first_step(5, Pos::new(0, 0), |p| p.x == 0, |p| p == Pos::new(2, 0)), None);
        assert_eq!(reachable_count(5, Pos::new(0, 0), |p| !wall(p)), 21);
    }
}
