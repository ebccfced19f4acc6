//! Symbolic set regions: membership predicates with interior-depth oracles,
//! exact measures and product closures where the geometry gives them, and
//! the set-expression parser used by the CLI.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::group::{AlgebraVector, GroupDescriptor, GroupElement};
use crate::measure::{exact_ball_measure, exact_rect_measure, exact_tube_measure};
use crate::subgroup::{builtin_subgroup, SubgroupDescriptor};

#[derive(Debug, Clone)]
pub enum Shape {
    Empty,
    Full,
    Ball {
        center: GroupElement,
        radius: f64,
    },
    Tube {
        subgroup: Arc<SubgroupDescriptor>,
        delta: f64,
    },
    Rect {
        subgroup: Arc<SubgroupDescriptor>,
        h_center: GroupElement,
        delta: f64,
        rho: f64,
    },
    Union(Box<SetRegion>, Box<SetRegion>),
    Inter(Box<SetRegion>, Box<SetRegion>),
    /// Left translate g . A.
    Translate(GroupElement, Box<SetRegion>),
}

/// A region of the group with a pure membership predicate, an interior-depth
/// oracle for sound inner discretization, and symbolic measure/product rules.
#[derive(Debug, Clone)]
pub struct SetRegion {
    pub group: GroupDescriptor,
    pub description: String,
    pub shape: Shape,
}

impl SetRegion {
    pub fn empty(group: &GroupDescriptor) -> Self {
        SetRegion {
            group: group.clone(),
            description: "empty".into(),
            shape: Shape::Empty,
        }
    }

    pub fn full(group: &GroupDescriptor) -> Self {
        SetRegion {
            group: group.clone(),
            description: "full".into(),
            shape: Shape::Full,
        }
    }

    pub fn ball(group: &GroupDescriptor, center: GroupElement, radius: f64) -> Self {
        SetRegion {
            group: group.clone(),
            description: format!("ball(r={radius})"),
            shape: Shape::Ball { center, radius },
        }
    }

    pub fn tube(subgroup: Arc<SubgroupDescriptor>, delta: f64) -> Self {
        SetRegion {
            group: subgroup.ambient.clone(),
            description: format!("tube:{}:{delta}", subgroup.name),
            shape: Shape::Tube { subgroup, delta },
        }
    }

    pub fn rect(
        subgroup: Arc<SubgroupDescriptor>,
        h_center: GroupElement,
        delta: f64,
        rho: f64,
    ) -> Self {
        SetRegion {
            group: subgroup.ambient.clone(),
            description: format!("rect:{}:{delta}:{rho}", subgroup.name),
            shape: Shape::Rect {
                subgroup,
                h_center,
                delta,
                rho,
            },
        }
    }

    pub fn union(a: SetRegion, b: SetRegion) -> Self {
        let group = a.group.clone();
        let description = format!("union({},{})", a.description, b.description);
        SetRegion {
            group,
            description,
            shape: Shape::Union(Box::new(a), Box::new(b)),
        }
    }

    pub fn inter(a: SetRegion, b: SetRegion) -> Self {
        let group = a.group.clone();
        let description = format!("inter({},{})", a.description, b.description);
        SetRegion {
            group,
            description,
            shape: Shape::Inter(Box::new(a), Box::new(b)),
        }
    }

    pub fn translate(g: GroupElement, a: SetRegion) -> Self {
        let group = a.group.clone();
        let description = format!("translate({})", a.description);
        SetRegion {
            group,
            description,
            shape: Shape::Translate(g, Box::new(a)),
        }
    }

    pub fn contains(&self, g: &GroupElement) -> bool {
        match &self.shape {
            Shape::Empty => false,
            Shape::Full => true,
            Shape::Ball { center, radius } => self.group.distance(g, center) < *radius,
            Shape::Tube { subgroup, delta } => subgroup.distance_to(g) < *delta,
            Shape::Rect {
                subgroup,
                h_center,
                delta,
                rho,
            } => {
                subgroup.distance_to(g) < *delta
                    && self.group.distance(&subgroup.project(g), h_center) < *rho
            }
            Shape::Union(a, b) => a.contains(g) || b.contains(g),
            Shape::Inter(a, b) => a.contains(g) && b.contains(g),
            Shape::Translate(t, a) => {
                let ti = self.group.inverse(t);
                let moved = self.group.multiply(&ti, g).expect("same group");
                a.contains(&moved)
            }
        }
    }

    /// Interior depth: a certified lower bound on the distance from g to the
    /// complement, i.e. B(g, depth(g)) is contained in the region. Negative
    /// values carry no guarantee beyond non-membership of the boundary band.
    /// `None` means no sound oracle exists for this shape.
    pub fn depth(&self, g: &GroupElement) -> Option<f64> {
        match &self.shape {
            Shape::Empty => Some(f64::NEG_INFINITY),
            Shape::Full => Some(1.0),
            Shape::Ball { center, radius } => Some(radius - self.group.distance(g, center)),
            Shape::Tube { subgroup, delta } => Some(delta - subgroup.distance_to(g)),
            Shape::Rect {
                subgroup,
                h_center,
                delta,
                rho,
            } => {
                // the foot-point map is 1/cos(d(g,H)_raw)-Lipschitz near the
                // subgroup; 1/2 is a sound slope bound for delta < 0.5
                let dn = subgroup.distance_to(g);
                let dh = self.group.distance(&subgroup.project(g), h_center);
                Some((delta - dn).min(0.5 * (rho - dh)))
            }
            Shape::Union(a, b) => Some(a.depth(g)?.max(b.depth(g)?)),
            Shape::Inter(a, b) => Some(a.depth(g)?.min(b.depth(g)?)),
            Shape::Translate(t, a) => {
                let ti = self.group.inverse(t);
                let moved = self.group.multiply(&ti, g).expect("same group");
                a.depth(&moved)
            }
        }
    }

    /// Exact Haar measure when a closed form exists.
    pub fn exact_measure(&self) -> Option<f64> {
        match &self.shape {
            Shape::Empty => Some(0.0),
            Shape::Full => Some(1.0),
            Shape::Ball { radius, .. } => exact_ball_measure(&self.group, *radius),
            Shape::Tube { subgroup, delta } => exact_tube_measure(subgroup, *delta),
            Shape::Rect {
                subgroup,
                delta,
                rho,
                ..
            } => exact_rect_measure(subgroup, *delta, *rho),
            Shape::Translate(_, a) => a.exact_measure(),
            _ => None,
        }
    }

    /// Symbolic Minkowski product A.B, exact in the bi-invariant metric:
    /// B(c1,r).B(c2,s) = B(c1 c2, r+s), and H_a . H_b = H_{a+b} for the same
    /// subgroup (also absorbing identity-centered balls into tubes).
    pub fn symbolic_product(&self, other: &SetRegion) -> Option<SetRegion> {
        let g = &self.group;
        let at_identity = |e: &GroupElement| g.distance(e, &g.identity()) < 1e-12;
        match (&self.shape, &other.shape) {
            (Shape::Ball { center: c1, radius: r }, Shape::Ball { center: c2, radius: s }) => {
                let c = g.multiply(c1, c2).ok()?;
                Some(SetRegion::ball(g, c, r + s))
            }
            (
                Shape::Tube { subgroup: h1, delta: d1 },
                Shape::Tube { subgroup: h2, delta: d2 },
            ) if same_subgroup(h1, h2) => Some(SetRegion::tube(h1.clone(), d1 + d2)),
            (Shape::Ball { center, radius }, Shape::Tube { subgroup, delta })
            | (Shape::Tube { subgroup, delta }, Shape::Ball { center, radius })
                if at_identity(center) =>
            {
                Some(SetRegion::tube(subgroup.clone(), delta + radius))
            }
            (Shape::Translate(t, a), _) => {
                let inner = a.symbolic_product(other)?;
                Some(SetRegion::translate(t.clone(), inner))
            }
            _ => None,
        }
    }

    /// Parse a set expression in the CLI grammar:
    /// `ball:<c1>,<c2>,...:<r>` | `tube:<subgroup>:<delta>` |
    /// `rect:<subgroup>:<h-param>:<delta>:<rho>` | `union(e1,e2)` |
    /// `inter(e1,e2)` | `translate(e,<c1>,<c2>,...)` | `full` | `empty`.
    pub fn parse(group: &GroupDescriptor, expr: &str) -> Result<SetRegion> {
        let mut p = Parser {
            group,
            src: expr,
            pos: 0,
        };
        let region = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input after expression"));
        }
        Ok(region)
    }
}

fn same_subgroup(a: &Arc<SubgroupDescriptor>, b: &Arc<SubgroupDescriptor>) -> bool {
    Arc::ptr_eq(a, b)
        || (a.name == b.name && a.conjugator.is_none() && b.conjugator.is_none())
}

struct Parser<'a> {
    group: &'a GroupDescriptor,
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> Error {
        Error::Parse {
            line: 1,
            column: self.pos + 1,
            message: format!(
                "{message}; grammar: ball:<c,..>:<r> | tube:<subgroup>:<delta> | \
                 rect:<subgroup>:<h-param>:<delta>:<rho> | union(e1,e2) | inter(e1,e2) | \
                 translate(e,<c,..>) | full | empty"
            ),
        }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        if self.src[self.pos..].starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{tok}`")))
        }
    }

    /// A field up to the next `:` `,` `)` or end.
    fn field(&mut self) -> &'a str {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src.as_bytes()[self.pos];
            if c == b':' || c == b',' || c == b')' || c == b'(' {
                break;
            }
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn number(&mut self) -> Result<f64> {
        let f = self.field();
        f.parse::<f64>()
            .map_err(|_| self.err(&format!("expected a number, got `{f}`")))
    }

    fn number_list(&mut self) -> Result<Vec<f64>> {
        let mut out = vec![self.number()?];
        while self.eat(",") {
            out.push(self.number()?);
        }
        Ok(out)
    }

    fn coords_to_element(&mut self, coords: Vec<f64>) -> Result<GroupElement> {
        if coords.len() != self.group.dim {
            return Err(self.err(&format!(
                "expected {} coordinates for {}, got {}",
                self.group.dim,
                self.group.name(),
                coords.len()
            )));
        }
        Ok(self.group.exp_map(&AlgebraVector::new(coords)))
    }

    fn expr(&mut self) -> Result<SetRegion> {
        self.skip_ws();
        if self.eat("ball:") {
            let coords = self.number_list()?;
            self.expect(":")?;
            let r = self.number()?;
            let center = self.coords_to_element(coords)?;
            Ok(SetRegion::ball(self.group, center, r))
        } else if self.eat("tube:") {
            let name = self.field().to_string();
            self.expect(":")?;
            let delta = self.number()?;
            let h = builtin_subgroup(self.group, &name).map_err(|e| match e {
                Error::UnknownSubgroup { name, group } => {
                    self.err(&format!("unknown subgroup `{name}` of {group}"))
                }
                other => other,
            })?;
            Ok(SetRegion::tube(h, delta))
        } else if self.eat("rect:") {
            let name = self.field().to_string();
            self.expect(":")?;
            let params = self.number_list()?;
            self.expect(":")?;
            let delta = self.number()?;
            self.expect(":")?;
            let rho = self.number()?;
            let h = builtin_subgroup(self.group, &name).map_err(|e| match e {
                Error::UnknownSubgroup { name, group } => {
                    self.err(&format!("unknown subgroup `{name}` of {group}"))
                }
                other => other,
            })?;
            let h_center = h.h_point(&params).map_err(|e| match e {
                Error::Invalid(m) => self.err(&m),
                other => other,
            })?;
            Ok(SetRegion::rect(h, h_center, delta, rho))
        } else if self.eat("union(") {
            let a = self.expr()?;
            self.expect(",")?;
            let b = self.expr()?;
            self.expect(")")?;
            Ok(SetRegion::union(a, b))
        } else if self.eat("inter(") {
            let a = self.expr()?;
            self.expect(",")?;
            let b = self.expr()?;
            self.expect(")")?;
            Ok(SetRegion::inter(a, b))
        } else if self.eat("translate(") {
            let a = self.expr()?;
            self.expect(",")?;
            let coords = self.number_list()?;
            self.expect(")")?;
            let g = self.coords_to_element(coords)?;
            Ok(SetRegion::translate(g, a))
        } else if self.eat("full") {
            Ok(SetRegion::full(self.group))
        } else if self.eat("empty") {
            Ok(SetRegion::empty(self.group))
        } else {
            Err(self.err("unrecognized set expression"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::mc_measure;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn parse_ball_tube_rect() {
        let so3 = GroupDescriptor::so3();
        let b = SetRegion::parse(&so3, "ball:0,0,0:0.2").unwrap();
        assert!(b.contains(&so3.identity()));
        assert_eq!(b.exact_measure(), crate::measure::exact_ball_measure(&so3, 0.2));

        let t = SetRegion::parse(&so3, "tube:so2_z:0.1").unwrap();
        assert!(t.contains(&so3.identity()));

        let r = SetRegion::parse(&so3, "rect:so2_z:0.0:0.05:0.2").unwrap();
        assert!(r.contains(&so3.identity()));

        let t1 = GroupDescriptor::torus(1);
        // normalized radius 0.1 on the diameter-1 circle is a raw arc of 0.05
        let b1 = SetRegion::parse(&t1, "ball:0:0.1").unwrap();
        assert!((b1.exact_measure().unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn parse_combinators() {
        let t2 = GroupDescriptor::torus(2);
        let e = SetRegion::parse(
            &t2,
            "union(ball:0,0:0.1,translate(inter(ball:0,0:0.2,full),0.3,0.3))",
        )
        .unwrap();
        assert!(e.contains(&t2.identity()));
        let far = GroupElement::Torus(vec![0.6, 0.6]);
        assert!(!e.contains(&far));
    }

    #[test]
    fn parse_errors_have_positions() {
        let so3 = GroupDescriptor::so3();
        for bad in ["tube:so2_z", "ball:0,0:0.1", "union(full,full", "wat", "full extra"] {
            match SetRegion::parse(&so3, bad) {
                Err(Error::Parse { line, column, message }) => {
                    assert_eq!(line, 1);
                    assert!(column >= 1, "{bad}");
                    assert!(message.contains("grammar"), "{bad}: {message}");
                }
                other => panic!("{bad}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn depth_implies_membership_with_margin() {
        let so3 = GroupDescriptor::so3();
        let regions = [
            SetRegion::parse(&so3, "ball:0.1,0,0:0.3").unwrap(),
            SetRegion::parse(&so3, "tube:so2_z:0.15").unwrap(),
            SetRegion::parse(&so3, "rect:so2_z:0.1:0.08:0.25").unwrap(),
            SetRegion::parse(&so3, "union(ball:0,0,0:0.2,tube:so2_z:0.1)").unwrap(),
        ];
        let mut r = rng(21);
        for region in &regions {
            let mut checked = 0;
            while checked < 200 {
                let g = so3.haar_sample_one(&mut r);
                let Some(d) = region.depth(&g) else { continue };
                if d <= 0.01 {
                    continue;
                }
                checked += 1;
                assert!(region.contains(&g), "{}", region.description);
                // points within depth stay inside
                let step = AlgebraVector::sample_in_ball(&mut r, 3, d * 0.95);
                let moved = so3.multiply(&so3.exp_map(&step), &g).unwrap();
                assert!(
                    region.contains(&moved),
                    "{} depth {d} violated",
                    region.description
                );
            }
        }
    }

    #[test]
    fn symbolic_products_are_exact() {
        let so3 = GroupDescriptor::so3();
        let a = SetRegion::parse(&so3, "ball:0,0,0:0.1").unwrap();
        let b = SetRegion::parse(&so3, "ball:0.2,0,0:0.15").unwrap();
        let ab = a.symbolic_product(&b).unwrap();
        if let Shape::Ball { radius, .. } = ab.shape {
            assert!((radius - 0.25).abs() < 1e-12);
        } else {
            panic!("expected a ball");
        }

        let t = SetRegion::parse(&so3, "tube:so2_z:0.05").unwrap();
        let tt = t.symbolic_product(&t).unwrap();
        assert_eq!(tt.exact_measure(), crate::measure::exact_tube_measure(
            match &t.shape { Shape::Tube { subgroup, .. } => subgroup, _ => unreachable!() },
            0.1,
        ));

        // ball at identity absorbs into the tube
        let be = SetRegion::parse(&so3, "ball:0,0,0:0.02").unwrap();
        let tb = t.symbolic_product(&be).unwrap();
        if let Shape::Tube { delta, .. } = tb.shape {
            assert!((delta - 0.07).abs() < 1e-12);
        } else {
            panic!("expected a tube");
        }
    }

    /// MC check that the symbolic tube product matches sampled products.
    #[test]
    fn tube_square_contains_sampled_products() {
        let so3 = GroupDescriptor::so3();
        let t = SetRegion::parse(&so3, "tube:so2_z:0.06").unwrap();
        let t2 = t.symbolic_product(&t).unwrap();
        let mut r = rng(22);
        let mut found = 0;
        while found < 500 {
            let x = so3.haar_sample_one(&mut r);
            let y = so3.haar_sample_one(&mut r);
            if t.contains(&x) && t.contains(&y) {
                found += 1;
                let p = so3.multiply(&x, &y).unwrap();
                assert!(t2.contains(&p));
            }
        }
    }

    #[test]
    fn rect_measure_and_membership_consistency() {
        let so3 = GroupDescriptor::so3();
        let reg = SetRegion::parse(&so3, "rect:so2_z:0.0:0.08:0.2").unwrap();
        let e = reg.exact_measure().unwrap();
        let mut r = rng(23);
        let mc = mc_measure(&so3, &mut r, 200_000, |g| reg.contains(g));
        assert!(mc.lower - 1e-3 <= e && e <= mc.upper + 1e-3, "exact {e} mc [{},{}]", mc.lower, mc.upper);
    }

    #[test]
    fn translate_preserves_exact_measure() {
        let t2 = GroupDescriptor::torus(2);
        let a = SetRegion::parse(&t2, "translate(ball:0,0:0.15,0.3,0.1)").unwrap();
        let plain = SetRegion::parse(&t2, "ball:0,0:0.15").unwrap();
        assert_eq!(a.exact_measure(), plain.exact_measure());
    }
}
