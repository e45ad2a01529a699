//! Shared grid-manipulation state: an agent, one movable object, optional
//! carry, and die-orientation math for the reorientation task.

use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::env::EpisodeCore;

/// Common move/grasp/release action indices for grid envs that use them.
pub const ACT_UP: usize = 0;
pub const ACT_DOWN: usize = 1;
pub const ACT_LEFT: usize = 2;
pub const ACT_RIGHT: usize = 3;
pub const ACT_GRASP: usize = 4;
pub const ACT_RELEASE: usize = 5;

pub fn move_delta(action: usize) -> Option<(i64, i64)> {
    match action {
        ACT_UP => Some((0, -1)),
        ACT_DOWN => Some((0, 1)),
        ACT_LEFT => Some((-1, 0)),
        ACT_RIGHT => Some((1, 0)),
        _ => None,
    }
}

pub fn sgn(v: i64) -> i64 {
    v.signum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridCore {
    pub w: i64,
    pub h: i64,
    pub agent: (i64, i64),
    pub obj: (i64, i64),
    pub held: bool,
}

impl GridCore {
    pub fn new(w: i64, h: i64) -> Self {
        Self {
            w,
            h,
            agent: (0, 0),
            obj: (0, 0),
            held: false,
        }
    }

    pub fn clamp(&self, (x, y): (i64, i64)) -> (i64, i64) {
        (x.clamp(0, self.w - 1), y.clamp(0, self.h - 1))
    }

    pub fn in_bounds(&self, (x, y): (i64, i64)) -> bool {
        x >= 0 && x < self.w && y >= 0 && y < self.h
    }

    /// Handles moves, grasp, and release. Returns true if the action was one
    /// of those.
    pub fn apply_common(&mut self, action: usize) -> bool {
        if let Some((dx, dy)) = move_delta(action) {
            self.agent = self.clamp((self.agent.0 + dx, self.agent.1 + dy));
            if self.held {
                self.obj = self.agent;
            }
            true
        } else if action == ACT_GRASP {
            if self.agent == self.obj {
                self.held = true;
            }
            true
        } else if action == ACT_RELEASE {
            self.held = false;
            true
        } else {
            false
        }
    }

    /// Object-nudge disturbance; held objects are not perturbed.
    pub fn apply_perturbation(&mut self, core: &mut EpisodeCore) {
        if !self.held {
            if let Some((dx, dy)) = core.perturbation_roll() {
                self.obj = self.clamp((self.obj.0 + dx, self.obj.1 + dy));
            }
        }
    }

    /// Greedy step toward `target`, x axis first. None when already there.
    pub fn step_toward(&self, from: (i64, i64), target: (i64, i64)) -> Option<usize> {
        if from.0 < target.0 {
            Some(ACT_RIGHT)
        } else if from.0 > target.0 {
            Some(ACT_LEFT)
        } else if from.1 < target.1 {
            Some(ACT_DOWN)
        } else if from.1 > target.1 {
            Some(ACT_UP)
        } else {
            None
        }
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        w.put_i64(self.agent.0);
        w.put_i64(self.agent.1);
        w.put_i64(self.obj.0);
        w.put_i64(self.obj.1);
        w.put_bool(self.held);
    }

    pub fn decode(&mut self, r: &mut ByteReader) -> Result<(), CodecError> {
        self.agent = (r.get_i64()?, r.get_i64()?);
        self.obj = (r.get_i64()?, r.get_i64()?);
        self.held = r.get_bool()?;
        Ok(())
    }

    /// One-hot spatial channels: agent plane then object plane.
    pub fn render_planes(&self, out: &mut Vec<f64>) {
        let n = (self.w * self.h) as usize;
        let idx = |(x, y): (i64, i64)| (y * self.w + x) as usize;
        let mut agent = vec![0.0; n];
        agent[idx(self.agent)] = 1.0;
        let mut obj = vec![0.0; n];
        obj[idx(self.obj)] = 1.0;
        out.extend_from_slice(&agent);
        out.extend_from_slice(&obj);
    }
}

/// Die orientation as (top, north, east) faces of a standard right-handed
/// die; opposite faces sum to 7. Exactly 24 orientations are reachable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DieOrientation {
    pub top: u8,
    pub north: u8,
    pub east: u8,
}

impl DieOrientation {
    pub fn canonical() -> Self {
        // 1 up, 2 to the north, 3 to the east
        Self {
            top: 1,
            north: 2,
            east: 3,
        }
    }

    pub fn is_valid(&self) -> bool {
        let f = [self.top, self.north, self.east];
        if f.iter().any(|&v| v < 1 || v > 6) {
            return false;
        }
        if self.top + self.north == 7 || self.top + self.east == 7 || self.north + self.east == 7 {
            return false;
        }
        if self.top == self.north || self.top == self.east || self.north == self.east {
            return false;
        }
        // right-handedness: the 24 valid orientations of a physical die
        Self::all().contains(self)
    }

    /// Enumerates the rotation group by closure from the canonical pose.
    pub fn all() -> Vec<DieOrientation> {
        let mut seen = vec![DieOrientation::canonical()];
        let mut frontier = seen.clone();
        while let Some(o) = frontier.pop() {
            for dir in 0..4 {
                let n = die_roll(o, dir);
                if !seen.contains(&n) {
                    seen.push(n);
                    frontier.push(n);
                }
            }
        }
        seen.sort();
        seen
    }

    pub fn index(&self) -> i64 {
        (self.top as i64 - 1) * 6 + (self.north as i64 - 1)
    }
}

/// Rolls the die one cell. Directions: 0 north (-y), 1 south (+y),
/// 2 east (+x), 3 west (-x).
pub fn die_roll(o: DieOrientation, dir: usize) -> DieOrientation {
    let DieOrientation { top, north, east } = o;
    match dir {
        0 => DieOrientation {
            top: 7 - north,
            north: top,
            east,
        },
        1 => DieOrientation {
            top: north,
            north: 7 - top,
            east,
        },
        2 => DieOrientation {
            top: 7 - east,
            north,
            east: top,
        },
        3 => DieOrientation {
            top: east,
            north,
            east: 7 - top,
        },
        _ => o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn die_group_has_24_orientations() {
        let all = DieOrientation::all();
        assert_eq!(all.len(), 24);
        // every face appears on top in exactly 4 orientations
        for face in 1..=6u8 {
            assert_eq!(all.iter().filter(|o| o.top == face).count(), 4);
        }
    }

    #[test]
    fn die_rolls_invert() {
        for o in DieOrientation::all() {
            assert_eq!(die_roll(die_roll(o, 0), 1), o);
            assert_eq!(die_roll(die_roll(o, 2), 3), o);
        }
    }

    #[test]
    fn die_roll_four_times_is_identity() {
        let o = DieOrientation::canonical();
        let mut r = o;
        for _ in 0..4 {
            r = die_roll(r, 0);
        }
        assert_eq!(r, o);
    }

    #[test]
    fn opposite_faces_sum_to_seven() {
        for o in DieOrientation::all() {
            for dir in 0..4 {
                let r = die_roll(o, dir);
                assert!(r.is_valid_faces());
            }
        }
    }

    impl DieOrientation {
        fn is_valid_faces(&self) -> bool {
            self.top + self.north != 7
                && self.top + self.east != 7
                && self.north + self.east != 7
                && self.top != self.north
        }
    }

    #[test]
    fn grid_moves_clamp_and_carry() {
        let mut g = GridCore::new(3, 3);
        g.agent = (0, 0);
        g.obj = (0, 0);
        g.apply_common(ACT_GRASP);
        assert!(g.held);
        g.apply_common(ACT_UP); // clamped
        assert_eq!(g.agent, (0, 0));
        g.apply_common(ACT_RIGHT);
        assert_eq!(g.agent, (1, 0));
        assert_eq!(g.obj, (1, 0));
        g.apply_common(ACT_RELEASE);
        g.apply_common(ACT_RIGHT);
        assert_eq!(g.obj, (1, 0));
    }
}
