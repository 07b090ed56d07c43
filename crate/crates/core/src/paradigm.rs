//! The German definite-singular-article paradigm: the 3x4 gender-case grid,
//! its syncretic article function, the catalog of trained article
//! transitions, the low-overlap control group, and the LR/GR/SO expectation
//! patterns used for scoring probability-shift heatmaps.
//!
//! Everything here is a small immutable value type; the module has no
//! dependencies on the rest of the pipeline.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Core enumerations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Masc,
    Neut,
    Fem,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Masc, Gender::Neut, Gender::Fem];

    pub fn letter(self) -> char {
        match self {
            Gender::Masc => 'M',
            Gender::Neut => 'N',
            Gender::Fem => 'F',
        }
    }

    fn from_letter(c: char) -> Option<Gender> {
        match c {
            'M' => Some(Gender::Masc),
            'N' => Some(Gender::Neut),
            'F' => Some(Gender::Fem),
            _ => None,
        }
    }

    /// Display rank used when naming gender transitions (F before M before N).
    fn name_rank(self) -> u8 {
        match self {
            Gender::Fem => 0,
            Gender::Masc => 1,
            Gender::Neut => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Case {
    Nom,
    Acc,
    Dat,
    Gen,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::Nom, Case::Acc, Case::Dat, Case::Gen];

    pub fn abbrev(self) -> &'static str {
        match self {
            Case::Nom => "Nom",
            Case::Acc => "Acc",
            Case::Dat => "Dat",
            Case::Gen => "Gen",
        }
    }

    fn from_abbrev(s: &str) -> Option<Case> {
        match s {
            "Nom" => Some(Case::Nom),
            "Acc" => Some(Case::Acc),
            "Dat" => Some(Case::Dat),
            "Gen" => Some(Case::Gen),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Article {
    Der,
    Die,
    Das,
    Den,
    Dem,
    Des,
}

impl Article {
    pub const ALL: [Article; 6] = [
        Article::Der,
        Article::Die,
        Article::Das,
        Article::Den,
        Article::Dem,
        Article::Des,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Article::Der => "der",
            Article::Die => "die",
            Article::Das => "das",
            Article::Den => "den",
            Article::Dem => "dem",
            Article::Des => "des",
        }
    }

    /// Sentence-initial surface form.
    pub fn capitalized(self) -> &'static str {
        match self {
            Article::Der => "Der",
            Article::Die => "Die",
            Article::Das => "Das",
            Article::Den => "Den",
            Article::Dem => "Dem",
            Article::Des => "Des",
        }
    }

    /// Case-insensitive surface-form lookup ("Der" and "der" both match).
    pub fn from_surface(s: &str) -> Option<Article> {
        let lower = s.to_lowercase();
        Article::ALL.into_iter().find(|a| a.as_str() == lower)
    }
}

impl fmt::Display for Article {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Cells and the paradigm table
// ---------------------------------------------------------------------------

/// One gender-case combination of the paradigm grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub gender: Gender,
    pub case: Case,
}

impl Cell {
    pub fn new(gender: Gender, case: Case) -> Cell {
        Cell { gender, case }
    }

    /// All 12 cells in canonical (gender-major, case-minor) order.
    pub fn all() -> Vec<Cell> {
        let mut out = Vec::with_capacity(12);
        for g in Gender::ALL {
            for c in Case::ALL {
                out.push(Cell::new(g, c));
            }
        }
        out
    }

    pub fn article(self) -> Article {
        article_of(self)
    }

    /// Canonical name, e.g. "M-Nom".
    pub fn name(self) -> String {
        format!("{}-{}", self.gender.letter(), self.case.abbrev())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.gender.letter(), self.case.abbrev())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellParseError(pub String);

impl fmt::Display for CellParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid cell name: {:?}", self.0)
    }
}

impl std::error::Error for CellParseError {}

impl FromStr for Cell {
    type Err = CellParseError;

    fn from_str(s: &str) -> Result<Cell, CellParseError> {
        let err = || CellParseError(s.to_string());
        let (g, c) = s.split_once('-').ok_or_else(err)?;
        let mut chars = g.chars();
        let letter = chars.next().ok_or_else(err)?;
        if chars.next().is_some() {
            return Err(err());
        }
        let gender = Gender::from_letter(letter).ok_or_else(err)?;
        let case = Case::from_abbrev(c).ok_or_else(err)?;
        Ok(Cell::new(gender, case))
    }
}

/// The article function a(g, c) of the definite singular paradigm.
///
/// der: M-Nom, F-Dat, F-Gen; die: F-Nom, F-Acc; das: N-Nom, N-Acc;
/// den: M-Acc; dem: M-Dat, N-Dat; des: M-Gen, N-Gen.
pub fn article_of(cell: Cell) -> Article {
    use Article::*;
    use Case::*;
    use Gender::*;
    match (cell.gender, cell.case) {
        (Masc, Nom) => Der,
        (Masc, Acc) => Den,
        (Masc, Dat) => Dem,
        (Masc, Gen) => Des,
        (Neut, Nom) => Das,
        (Neut, Acc) => Das,
        (Neut, Dat) => Dem,
        (Neut, Gen) => Des,
        (Fem, Nom) => Die,
        (Fem, Acc) => Die,
        (Fem, Dat) => Der,
        (Fem, Gen) => Der,
    }
}

/// Inverse image of [`article_of`]: all cells realizing the given article.
pub fn syncretic_cells(article: Article) -> Vec<Cell> {
    Cell::all()
        .into_iter()
        .filter(|z| article_of(*z) == article)
        .collect()
}

/// The full 12-entry grid as an explicit table value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParadigmTable {
    entries: Vec<(Cell, Article)>,
}

impl ParadigmTable {
    pub fn new() -> ParadigmTable {
        ParadigmTable {
            entries: Cell::all().into_iter().map(|z| (z, article_of(z))).collect(),
        }
    }

    pub fn entries(&self) -> &[(Cell, Article)] {
        &self.entries
    }

    pub fn article_of(&self, cell: Cell) -> Article {
        article_of(cell)
    }
}

impl Default for ParadigmTable {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Transitions
// ---------------------------------------------------------------------------

/// A bidirectional transition between two cells differing in exactly one
/// dimension. `z1` realizes the left article of its group, `z2` the right;
/// the forward direction z1 -> z2 carries task label +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Transition {
    pub z1: Cell,
    pub z2: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransitionError {
    SameCell,
    TwoDimensions,
    SameArticle,
}

impl fmt::Display for TransitionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransitionError::SameCell => write!(f, "transition cells are identical"),
            TransitionError::TwoDimensions => {
                write!(f, "transition cells differ in both gender and case")
            }
            TransitionError::SameArticle => {
                write!(f, "transition cells realize the same article")
            }
        }
    }
}

impl std::error::Error for TransitionError {}

impl Transition {
    /// Builds a trained transition; rejects pairs that do not differ in
    /// exactly one dimension or whose surface articles coincide.
    pub fn new(z1: Cell, z2: Cell) -> Result<Transition, TransitionError> {
        if z1 == z2 {
            return Err(TransitionError::SameCell);
        }
        if z1.gender != z2.gender && z1.case != z2.case {
            return Err(TransitionError::TwoDimensions);
        }
        if article_of(z1) == article_of(z2) {
            return Err(TransitionError::SameArticle);
        }
        Ok(Transition { z1, z2 })
    }

    pub fn is_gender_transition(self) -> bool {
        self.z1.case == self.z2.case
    }

    pub fn cells(self) -> [Cell; 2] {
        [self.z1, self.z2]
    }

    pub fn articles(self) -> (Article, Article) {
        (article_of(self.z1), article_of(self.z2))
    }

    /// Canonical variant name: gender transitions as "G[F,M]_Nom", case
    /// transitions as "G[F]_Nom-Dat". Genders are listed F, M, N and cases
    /// in declension order, independent of the z1/z2 roles.
    pub fn name(self) -> String {
        if self.is_gender_transition() {
            let mut gs = [self.z1.gender, self.z2.gender];
            gs.sort_by_key(|g| g.name_rank());
            format!(
                "G[{},{}]_{}",
                gs[0].letter(),
                gs[1].letter(),
                self.z1.case.abbrev()
            )
        } else {
            let mut cs = [self.z1.case, self.z2.case];
            cs.sort();
            format!(
                "G[{}]_{}-{}",
                self.z1.gender.letter(),
                cs[0].abbrev(),
                cs[1].abbrev()
            )
        }
    }

    /// Parses a canonical variant name back into the cataloged transition.
    pub fn parse_name(name: &str) -> Option<Transition> {
        catalog_transitions()
            .into_iter()
            .map(|(_, t)| t)
            .find(|t| t.name() == name)
    }

    pub fn directed(self, forward: bool) -> DirectedTransition {
        DirectedTransition {
            transition: self,
            forward,
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// One direction of a transition. Forward means z1 -> z2 (label +1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DirectedTransition {
    pub transition: Transition,
    pub forward: bool,
}

impl DirectedTransition {
    pub fn source(self) -> Cell {
        if self.forward {
            self.transition.z1
        } else {
            self.transition.z2
        }
    }

    pub fn destination(self) -> Cell {
        if self.forward {
            self.transition.z2
        } else {
            self.transition.z1
        }
    }

    pub fn source_article(self) -> Article {
        article_of(self.source())
    }

    pub fn target_article(self) -> Article {
        article_of(self.destination())
    }

    /// Task label: +1 for z1 -> z2, -1 for z2 -> z1.
    pub fn label(self) -> i8 {
        if self.forward {
            1
        } else {
            -1
        }
    }

    /// Bottleneck value selecting this direction when decoding.
    pub fn h_star(self) -> f64 {
        f64::from(self.label())
    }

    /// Report name, e.g. "der->die".
    pub fn arrow(self) -> String {
        format!("{}->{}", self.source_article(), self.target_article())
    }
}

impl fmt::Display for DirectedTransition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.transition.name(), self.arrow())
    }
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

/// A group of transitions realizing the same unordered article pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArticleGroup {
    pub left: Article,
    pub right: Article,
    pub transitions: Vec<Transition>,
}

impl ArticleGroup {
    pub fn name(&self) -> String {
        format!("{}<->{}", self.left, self.right)
    }
}

fn cell(g: Gender, c: Case) -> Cell {
    Cell::new(g, c)
}

fn tr(z1: Cell, z2: Cell) -> Transition {
    Transition::new(z1, z2).expect("catalog transition must be valid")
}

/// The six trained article groups with their 17 transition variants.
///
/// Group order and member order follow the published catalog: gender
/// transitions first, then case transitions in declension order.
pub fn catalog() -> Vec<ArticleGroup> {
    use Article::*;
    use Case::*;
    use Gender::*;
    vec![
        ArticleGroup {
            left: Der,
            right: Die,
            transitions: vec![
                tr(cell(Masc, Nom), cell(Fem, Nom)), // G[F,M]_Nom
                tr(cell(Fem, Dat), cell(Fem, Nom)),  // G[F]_Nom-Dat
                tr(cell(Fem, Gen), cell(Fem, Nom)),  // G[F]_Nom-Gen
                tr(cell(Fem, Dat), cell(Fem, Acc)),  // G[F]_Acc-Dat
                tr(cell(Fem, Gen), cell(Fem, Acc)),  // G[F]_Acc-Gen
            ],
        },
        ArticleGroup {
            left: Der,
            right: Dem,
            transitions: vec![
                tr(cell(Fem, Dat), cell(Masc, Dat)), // G[F,M]_Dat
                tr(cell(Fem, Dat), cell(Neut, Dat)), // G[F,N]_Dat
                tr(cell(Masc, Nom), cell(Masc, Dat)), // G[M]_Nom-Dat
            ],
        },
        ArticleGroup {
            left: Der,
            right: Des,
            transitions: vec![
                tr(cell(Fem, Gen), cell(Masc, Gen)), // G[F,M]_Gen
                tr(cell(Fem, Gen), cell(Neut, Gen)), // G[F,N]_Gen
                tr(cell(Masc, Nom), cell(Masc, Gen)), // G[M]_Nom-Gen
            ],
        },
        ArticleGroup {
            left: Die,
            right: Das,
            transitions: vec![
                tr(cell(Fem, Nom), cell(Neut, Nom)), // G[F,N]_Nom
                tr(cell(Fem, Acc), cell(Neut, Acc)), // G[F,N]_Acc
            ],
        },
        ArticleGroup {
            left: Das,
            right: Dem,
            transitions: vec![
                tr(cell(Neut, Nom), cell(Neut, Dat)), // G[N]_Nom-Dat
                tr(cell(Neut, Acc), cell(Neut, Dat)), // G[N]_Acc-Dat
            ],
        },
        ArticleGroup {
            left: Das,
            right: Des,
            transitions: vec![
                tr(cell(Neut, Nom), cell(Neut, Gen)), // G[N]_Nom-Gen
                tr(cell(Neut, Acc), cell(Neut, Gen)), // G[N]_Acc-Gen
            ],
        },
    ]
}

/// All 17 cataloged variants, flattened in catalog order.
pub fn catalog_transitions() -> Vec<(ArticleGroup, Transition)> {
    catalog()
        .into_iter()
        .flat_map(|g| {
            g.transitions
                .clone()
                .into_iter()
                .map(move |t| (g.clone(), t))
        })
        .collect()
}

/// All 34 directed transitions (both directions of each variant).
pub fn directed_transitions() -> Vec<DirectedTransition> {
    catalog_transitions()
        .into_iter()
        .flat_map(|(_, t)| [t.directed(true), t.directed(false)])
        .collect()
}

/// Along-dimension, article-changing cell pairs excluded from the default
/// catalog: the six singleton article pairs plus the dem<->des pair, which
/// the trained catalog does not cover.
pub fn excluded_transitions() -> Vec<Transition> {
    let cataloged: BTreeSet<Transition> = catalog_transitions()
        .into_iter()
        .map(|(_, t)| t)
        .collect();
    let mut out = Vec::new();
    let cells = Cell::all();
    for (i, &a) in cells.iter().enumerate() {
        for &b in cells.iter().skip(i + 1) {
            let one_dim = (a.gender == b.gender) != (a.case == b.case);
            if !one_dim || article_of(a) == article_of(b) {
                continue;
            }
            let t = tr(a, b);
            let flipped = tr(b, a);
            if !cataloged.contains(&t) && !cataloged.contains(&flipped) {
                out.push(t);
            }
        }
    }
    out
}

/// The four-variant control group spanning Acc/Dat and Fem/Neut, whose four
/// cells realize four distinct articles (die, der, das, dem).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlGroup {
    pub transitions: [Transition; 4],
}

pub fn control_group() -> ControlGroup {
    use Case::*;
    use Gender::*;
    ControlGroup {
        transitions: [
            tr(cell(Fem, Dat), cell(Fem, Acc)),  // G[F]_Acc-Dat (der<->die)
            tr(cell(Neut, Acc), cell(Neut, Dat)), // G[N]_Acc-Dat (das<->dem)
            tr(cell(Fem, Acc), cell(Neut, Acc)), // G[F,N]_Acc (die<->das)
            tr(cell(Fem, Dat), cell(Neut, Dat)), // G[F,N]_Dat (der<->dem)
        ],
    }
}

impl ControlGroup {
    /// The four involved cells in canonical order.
    pub fn cells(&self) -> BTreeSet<Cell> {
        self.transitions
            .iter()
            .flat_map(|t| t.cells())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Generalization patterns
// ---------------------------------------------------------------------------

/// Hypothesized shapes of probability shifts across the paradigm grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Local rule: effects restricted to the trained source cell.
    LocalRule,
    /// Generalized rule: the transition swept along its preserved dimension.
    GeneralizedRule,
    /// Spillover: effects on every cell sharing the source surface article.
    Spillover,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 3] = [
        Hypothesis::LocalRule,
        Hypothesis::GeneralizedRule,
        Hypothesis::Spillover,
    ];

    pub fn abbrev(self) -> &'static str {
        match self {
            Hypothesis::LocalRule => "LR",
            Hypothesis::GeneralizedRule => "GR",
            Hypothesis::Spillover => "SO",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

/// Expected direction of a probability change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

pub type PatternEntry = (Cell, Article, Sign);

/// Expected (dataset cell, article, sign) entries under a hypothesis.
///
/// Each affected dataset expects an increase of the mapped target article
/// and a decrease of its source article; the negative expectation on the
/// source article is a reporting convention (probability mass moves away
/// from the factual form under a targeted swap), not part of the published
/// pattern drawings.
pub fn expected_pattern(dt: DirectedTransition, hypothesis: Hypothesis) -> BTreeSet<PatternEntry> {
    let src = dt.source();
    let dst = dt.destination();
    let mut out = BTreeSet::new();
    let mut push_pair = |data_cell: Cell, mapped: Cell| {
        out.insert((data_cell, article_of(mapped), Sign::Plus));
        out.insert((data_cell, article_of(data_cell), Sign::Minus));
    };
    match hypothesis {
        Hypothesis::LocalRule => {
            push_pair(src, dst);
        }
        Hypothesis::GeneralizedRule => {
            if dt.transition.is_gender_transition() {
                // Gender swap at fixed case: sweep all four cases.
                for c in Case::ALL {
                    push_pair(cell(src.gender, c), cell(dst.gender, c));
                }
            } else {
                // Case swap at fixed gender: sweep all three genders.
                for g in Gender::ALL {
                    push_pair(cell(g, src.case), cell(g, dst.case));
                }
            }
        }
        Hypothesis::Spillover => {
            // Every dataset whose factual article equals the source article.
            for z in syncretic_cells(dt.source_article()) {
                out.insert((z, dt.target_article(), Sign::Plus));
                out.insert((z, dt.source_article(), Sign::Minus));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Article::*;
    use Case::*;
    use Gender::*;

    #[test]
    fn table_matches_paradigm_exactly() {
        let expect = [
            ((Masc, Nom), Der),
            ((Masc, Acc), Den),
            ((Masc, Dat), Dem),
            ((Masc, Gen), Des),
            ((Neut, Nom), Das),
            ((Neut, Acc), Das),
            ((Neut, Dat), Dem),
            ((Neut, Gen), Des),
            ((Fem, Nom), Die),
            ((Fem, Acc), Die),
            ((Fem, Dat), Der),
            ((Fem, Gen), Der),
        ];
        for ((g, c), a) in expect {
            assert_eq!(article_of(cell(g, c)), a, "{g:?} {c:?}");
        }
        assert_eq!(ParadigmTable::new().entries().len(), 12);
    }

    #[test]
    fn article_multiplicities() {
        let counts: Vec<(Article, usize)> = Article::ALL
            .into_iter()
            .map(|a| (a, syncretic_cells(a).len()))
            .collect();
        assert_eq!(
            counts,
            vec![(Der, 3), (Die, 2), (Das, 2), (Den, 1), (Dem, 2), (Des, 2)]
        );
        let total: usize = counts.iter().map(|(_, n)| n).sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn syncretic_examples() {
        assert_eq!(
            syncretic_cells(Der),
            vec![cell(Masc, Nom), cell(Fem, Dat), cell(Fem, Gen)]
        );
        assert_eq!(syncretic_cells(Den), vec![cell(Masc, Acc)]);
        assert_eq!(syncretic_cells(Das), vec![cell(Neut, Nom), cell(Neut, Acc)]);
    }

    #[test]
    fn catalog_counts_and_names() {
        let groups = catalog();
        let sizes: Vec<usize> = groups.iter().map(|g| g.transitions.len()).collect();
        assert_eq!(sizes, vec![5, 3, 3, 2, 2, 2]);
        assert_eq!(catalog_transitions().len(), 17);

        let der_die: Vec<String> = groups[0].transitions.iter().map(|t| t.name()).collect();
        assert_eq!(
            der_die,
            vec![
                "G[F,M]_Nom",
                "G[F]_Nom-Dat",
                "G[F]_Nom-Gen",
                "G[F]_Acc-Dat",
                "G[F]_Acc-Gen"
            ]
        );
        assert_eq!(groups[3].name(), "die<->das");
        assert_eq!(groups[3].transitions.len(), 2);
    }

    #[test]
    fn catalog_transitions_change_articles_and_roles_match_group() {
        for group in catalog() {
            for t in &group.transitions {
                assert_eq!(article_of(t.z1), group.left, "{}", t.name());
                assert_eq!(article_of(t.z2), group.right, "{}", t.name());
            }
        }
    }

    #[test]
    fn non_cataloged_pairs_coincide_or_fall_outside_catalog_groups() {
        let group_pairs: BTreeSet<(Article, Article)> = catalog()
            .iter()
            .flat_map(|g| [(g.left, g.right), (g.right, g.left)])
            .collect();
        let cataloged_cellpairs: BTreeSet<BTreeSet<Cell>> = catalog_transitions()
            .into_iter()
            .map(|(_, t)| t.cells().into_iter().collect())
            .collect();
        let cells = Cell::all();
        for (i, &a) in cells.iter().enumerate() {
            for &b in cells.iter().skip(i + 1) {
                let one_dim = (a.gender == b.gender) != (a.case == b.case);
                if !one_dim {
                    continue;
                }
                let pair: BTreeSet<Cell> = [a, b].into_iter().collect();
                if cataloged_cellpairs.contains(&pair) {
                    continue;
                }
                // Not cataloged: either syncretic, or its article pair is
                // not a cataloged group (singletons plus dem<->des).
                let same = article_of(a) == article_of(b);
                let outside = !group_pairs.contains(&(article_of(a), article_of(b)));
                assert!(same || outside, "{a}-{b} should be cataloged");
            }
        }
        // (Fem,Nom)-(Fem,Acc) is the canonical syncretic pair.
        assert_eq!(article_of(cell(Fem, Nom)), article_of(cell(Fem, Acc)));
    }

    #[test]
    fn excluded_set_is_singletons_plus_dem_des() {
        let excluded = excluded_transitions();
        assert_eq!(excluded.len(), 8);
        let mut pairs: Vec<BTreeSet<Article>> = excluded
            .iter()
            .map(|t| t.cells().into_iter().map(article_of).collect())
            .collect();
        pairs.sort();
        pairs.dedup();
        // Seven excluded article pairs; only dem<->des has two realizations.
        assert_eq!(pairs.len(), 7);
        let dem_des: BTreeSet<Article> = [Dem, Des].into_iter().collect();
        let dem_des_count = excluded
            .iter()
            .filter(|t| {
                t.cells().into_iter().map(article_of).collect::<BTreeSet<_>>() == dem_des
            })
            .count();
        assert_eq!(dem_des_count, 2);
    }

    #[test]
    fn control_group_realizes_four_distinct_articles() {
        let cg = control_group();
        let cells = cg.cells();
        assert_eq!(
            cells,
            [cell(Neut, Acc), cell(Neut, Dat), cell(Fem, Acc), cell(Fem, Dat)]
                .into_iter()
                .collect()
        );
        let articles: BTreeSet<Article> = cells.into_iter().map(article_of).collect();
        assert_eq!(articles, [Die, Der, Das, Dem].into_iter().collect());
        // Every member is one of the 17 cataloged variants.
        let names: BTreeSet<String> = catalog_transitions()
            .into_iter()
            .map(|(_, t)| t.name())
            .collect();
        for t in cg.transitions {
            assert!(names.contains(&t.name()), "{}", t.name());
        }
    }

    #[test]
    fn directed_roles_and_labels() {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        assert_eq!(t.z1, cell(Masc, Nom));
        assert_eq!(t.z2, cell(Fem, Nom));
        let fwd = t.directed(true);
        assert_eq!(fwd.source_article(), Der);
        assert_eq!(fwd.target_article(), Die);
        assert_eq!(fwd.label(), 1);
        assert_eq!(fwd.arrow(), "der->die");
        let bwd = t.directed(false);
        assert_eq!(bwd.label(), -1);
        assert_eq!(bwd.arrow(), "die->der");
    }

    #[test]
    fn name_round_trip_for_all_variants() {
        for (_, t) in catalog_transitions() {
            let parsed = Transition::parse_name(&t.name()).unwrap();
            assert_eq!(parsed, t);
        }
        assert!(Transition::parse_name("G[X]_Nom-Dat").is_none());
    }

    #[test]
    fn local_rule_pattern_example() {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        let lr = expected_pattern(t.directed(true), Hypothesis::LocalRule);
        let want: BTreeSet<PatternEntry> = [
            (cell(Masc, Nom), Die, Sign::Plus),
            (cell(Masc, Nom), Der, Sign::Minus),
        ]
        .into_iter()
        .collect();
        assert_eq!(lr, want);
    }

    #[test]
    fn generalized_rule_sweeps_cases_for_gender_transition() {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        let gr = expected_pattern(t.directed(true), Hypothesis::GeneralizedRule);
        let cells: BTreeSet<Cell> = gr.iter().map(|(z, _, _)| *z).collect();
        assert_eq!(
            cells,
            Case::ALL.into_iter().map(|c| cell(Masc, c)).collect()
        );
        // Increase of a(Fem, c) on (Masc, c) for every case c.
        for c in Case::ALL {
            assert!(gr.contains(&(cell(Masc, c), article_of(cell(Fem, c)), Sign::Plus)));
        }
    }

    #[test]
    fn generalized_rule_sweeps_genders_for_case_transition() {
        let t = Transition::parse_name("G[F]_Nom-Dat").unwrap();
        // Forward is der->die: source (Fem,Dat), swept along genders at Dat.
        let gr = expected_pattern(t.directed(true), Hypothesis::GeneralizedRule);
        let cells: BTreeSet<Cell> = gr.iter().map(|(z, _, _)| *z).collect();
        assert_eq!(
            cells,
            Gender::ALL.into_iter().map(|g| cell(g, Dat)).collect()
        );
    }

    #[test]
    fn spillover_covers_source_article_cells() {
        let t = Transition::parse_name("G[F,M]_Nom").unwrap();
        let so = expected_pattern(t.directed(true), Hypothesis::Spillover);
        let plus_cells: BTreeSet<Cell> = so
            .iter()
            .filter(|(_, a, s)| *a == Die && *s == Sign::Plus)
            .map(|(z, _, _)| *z)
            .collect();
        assert_eq!(
            plus_cells,
            [cell(Masc, Nom), cell(Fem, Dat), cell(Fem, Gen)]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn lr_is_subset_of_so_for_all_directed_transitions() {
        let dts = directed_transitions();
        assert_eq!(dts.len(), 34);
        for dt in dts {
            let lr = expected_pattern(dt, Hypothesis::LocalRule);
            let so = expected_pattern(dt, Hypothesis::Spillover);
            assert!(lr.is_subset(&so), "{dt}");
        }
    }

    #[test]
    fn gr_cell_counts() {
        for dt in directed_transitions() {
            let gr = expected_pattern(dt, Hypothesis::GeneralizedRule);
            let cells: BTreeSet<Cell> = gr.iter().map(|(z, _, _)| *z).collect();
            let want = if dt.transition.is_gender_transition() {
                4
            } else {
                3
            };
            assert_eq!(cells.len(), want, "{dt}");
        }
    }

    #[test]
    fn cell_name_round_trip() {
        for z in Cell::all() {
            assert_eq!(z.name().parse::<Cell>().unwrap(), z);
        }
        assert!("M-Foo".parse::<Cell>().is_err());
        assert!("X-Nom".parse::<Cell>().is_err());
    }
}
