use std::collections::HashMap;
use std::path::Path;

use super::rotation::Vec3;
use crate::error::{Error, Result};

const DEFAULT_CONFIG: &str = include_str!("../../assets/smplh.skel");

/// Joint hierarchy with rest offsets, foot joints for contact labels and
/// the body/hand partition used by the metrics.
///
/// Config format, one directive per line, `#` comments:
///
/// ```text
/// contact_speed = 0.005
/// contact_height = 0.05
/// foot = left_ankle right_ankle left_foot right_foot
/// joint <name> <parent or -> <x> <y> <z> <body|hand>
/// ```
///
/// Joints must be listed parents first. The order of `foot` fixes the order
/// of the contact channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonDef {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<Vec3>,
    pub foot_joints: [usize; 4],
    pub body_joints: Vec<usize>,
    pub hand_joints: Vec<usize>,
    /// Meters per frame.
    pub contact_speed: f64,
    /// Meters above the per-joint ground level.
    pub contact_height: f64,
}

impl SkeletonDef {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        offsets: Vec<Vec3>,
        foot_joints: [usize; 4],
        body_joints: Vec<usize>,
        hand_joints: Vec<usize>,
    ) -> Result<Self> {
        let s = Self {
            names,
            parents,
            offsets,
            foot_joints,
            body_joints,
            hand_joints,
            contact_speed: 0.005,
            contact_height: 0.05,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        let bad = |m: String| Err(Error::Structure(m));
        if n == 0 {
            return bad("no joints".into());
        }
        if self.names.len() != n || self.offsets.len() != n {
            return bad(format!(
                "{n} parents but {} names and {} offsets",
                self.names.len(),
                self.offsets.len()
            ));
        }
        if self.parents[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                None => return bad(format!("joint {j} ({}) has no parent", self.names[j])),
                Some(p) if *p >= j => {
                    return bad(format!(
                        "joint {j} ({}) has parent {p}; parents must precede children",
                        self.names[j]
                    ))
                }
                _ => {}
            }
        }
        if let Some(f) = self.foot_joints.iter().find(|&&f| f >= n) {
            return bad(format!("foot joint {f} out of range"));
        }
        let mut seen = vec![0u8; n];
        for &j in self.body_joints.iter().chain(&self.hand_joints) {
            if j >= n {
                return bad(format!("joint set index {j} out of range"));
            }
            seen[j] += 1;
        }
        if let Some(j) = seen.iter().position(|&c| c != 1) {
            return bad(format!(
                "body and hand sets must partition the joints; joint {j} appears {} times",
                seen[j]
            ));
        }
        if !(self.contact_speed > 0.0 && self.contact_height > 0.0) {
            return bad("contact thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        let mut body = Vec::new();
        let mut hand = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut foot_names: Option<Vec<String>> = None;
        let mut speed = 0.005;
        let mut height = 0.05;

        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Structure(format!("line {}: {m}: `{line}`", ln + 1));
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("expected a number"));
            if let Some((key, value)) = line.split_once('=') {
                let value = value.trim();
                match key.trim() {
                    "contact_speed" => speed = num(value)?,
                    "contact_height" => height = num(value)?,
                    "foot" => foot_names = Some(value.split_whitespace().map(String::from).collect()),
                    other => return Err(err(&format!("unknown key `{other}`"))),
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f[0] != "joint" || f.len() != 7 {
                return Err(err("expected `joint <name> <parent> <x> <y> <z> <body|hand>`"));
            }
            let j = names.len();
            if index.insert(f[1].to_string(), j).is_some() {
                return Err(err("duplicate joint name"));
            }
            let parent = match f[2] {
                "-" => None,
                p => Some(*index.get(p).filter(|&&i| i < j).ok_or_else(|| err("unknown or later parent"))?),
            };
            names.push(f[1].to_string());
            parents.push(parent);
            offsets.push([num(f[3])?, num(f[4])?, num(f[5])?]);
            match f[6] {
                "body" => body.push(j),
                "hand" => hand.push(j),
                _ => return Err(err("joint set must be `body` or `hand`")),
            }
        }
        let foot_names =
            foot_names.ok_or_else(|| Error::Structure("missing `foot = ...` line".into()))?;
        if foot_names.len() != 4 {
            return Err(Error::Structure(format!(
                "`foot` needs 4 joints, got {}",
                foot_names.len()
            )));
        }
        let mut foot = [0; 4];
        for (slot, name) in foot.iter_mut().zip(&foot_names) {
            *slot = *index
                .get(name)
                .ok_or_else(|| Error::Structure(format!("unknown foot joint `{name}`")))?;
        }
        let mut s = Self::new(names, parents, offsets, foot, body, hand)?;
        s.contact_speed = speed;
        s.contact_height = height;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::error::read_text(path)?)
    }

    /// The bundled 52-joint skeleton (22 body, 30 hand joints, y up).
    pub fn default_52() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("bundled skeleton parses")
    }

    /// Renders the config text accepted by [`SkeletonDef::parse`].
    pub fn to_config(&self) -> String {
        let mut out = format!(
            "contact_speed = {}\ncontact_height = {}\nfoot = {}\n",
            self.contact_speed,
            self.contact_height,
            self.foot_joints.map(|j| self.names[j].as_str()).join(" ")
        );
        for j in 0..self.len() {
            let parent = self.parents[j].map_or("-", |p| self.names[p].as_str());
            let set = if self.hand_joints.contains(&j) { "hand" } else { "body" };
            let [x, y, z] = self.offsets[j];
            out += &format!("joint {} {parent} {x} {y} {z} {set}\n", self.names[j]);
        }
        out
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        (j + 1..self.len()).filter(move |&c| self.parents[c] == Some(j))
    }

    /// `(left, right)` foot joint indices.
    pub fn foot_sides(&self) -> ([usize; 2], [usize; 2]) {
        let f = self.foot_joints;
        ([f[0], f[2]], [f[1], f[3]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_shape() {
        let s = SkeletonDef::default_52();
        assert_eq!(s.len(), 52);
        assert_eq!(s.body_joints.len(), 22);
        assert_eq!(s.hand_joints, (22..52).collect::<Vec<_>>());
        assert_eq!(s.foot_joints, [7, 8, 10, 11]);
        assert_eq!(s.parents[20], Some(18));
        assert_eq!(s.parents[22], Some(20));
        assert_eq!(s.parents[37], Some(21));
        assert_eq!(s.foot_sides(), ([7, 10], [8, 11]));
    }

    #[test]
    fn config_round_trips() {
        let s = SkeletonDef::default_52();
        assert_eq!(SkeletonDef::parse(&s.to_config()).unwrap(), s);
    }

    #[test]
    fn structural_errors() {
        let base = "foot = a b b b\njoint a - 0 0 0 body\n";
        assert!(SkeletonDef::parse(&format!("{base}joint b a 1 0 0 body\n")).is_ok());
        for bad in [
            format!("{base}joint b c 1 0 0 body\n"),
            format!("{base}joint b - 1 0 0 body\n"),
            format!("{base}joint b a 1 0 0 tail\n"),
            format!("{base}joint a a 1 0 0 body\n"),
            "joint a - 0 0 0 body\n".to_string(),
            format!("{base}joint b a x 0 0 body\n"),
            format!("contact_speed = -1\n{base}joint b a 1 0 0 body\n"),
        ] {
            assert!(matches!(SkeletonDef::parse(&bad), Err(Error::Structure(_))), "{bad}");
        }
        let cyclic = SkeletonDef::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(1)],
            vec![[0.0; 3]; 2],
            [0; 4],
            vec![0, 1],
            vec![],
        );
        assert!(matches!(cyclic, Err(Error::Structure(_))));
        let overlap = SkeletonDef::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(0)],
            vec![[0.0; 3]; 2],
            [0; 4],
            vec![0, 1],
            vec![1],
        );
        assert!(overlap.is_err());
    }
}
