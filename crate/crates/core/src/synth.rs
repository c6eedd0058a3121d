//! Seeded synthetic data: Gaussian blobs, planted sparse dictionaries and a
//! small catalog whose documents carry planted concept tokens.

use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{PhysicalProperties, SkyPosition, SourceRecord};
use crate::llmclient::{Concept, MockConfig};

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `n_per` points around each center with unit isotropic noise. Labels are
/// the center index; rows are grouped by center.
pub fn gaussian_blobs(seed: u64, centers: &Array2<f64>, n_per: usize, sigma: f64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, d) = centers.dim();
    let mut x = Array2::zeros((k * n_per, d));
    let mut labels = Vec::with_capacity(k * n_per);
    for (c, center) in centers.outer_iter().enumerate() {
        for i in 0..n_per {
            let mut row = x.row_mut(c * n_per + i);
            for (v, m) in row.iter_mut().zip(center) {
                *v = m + sigma * gaussian(&mut rng);
            }
            labels.push(c);
        }
    }
    (x, labels)
}

/// Two blobs in `d` dimensions whose centers are `separation` apart along
/// the first axis, unit noise.
pub fn two_blobs(seed: u64, n_per: usize, d: usize, separation: f64) -> (Array2<f64>, Vec<usize>) {
    let mut centers = Array2::zeros((2, d));
    centers[[1, 0]] = separation;
    gaussian_blobs(seed, &centers, n_per, 1.0)
}

pub struct PlantedDictionary {
    /// `n_atoms × d`, unit rows.
    pub atoms: Array2<f64>,
    pub data: Array2<f64>,
    /// Atom indices used by each sample.
    pub supports: Vec<Vec<usize>>,
}

/// Samples that are positive combinations of between 1 and `max_support`
/// random unit atoms with coefficients uniform in `[lo, hi)`.
pub fn planted_dictionary(
    seed: u64,
    n_atoms: usize,
    d: usize,
    max_support: usize,
    n_samples: usize,
    (lo, hi): (f64, f64),
) -> PlantedDictionary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut atoms = Array2::zeros((n_atoms, d));
    for mut r in atoms.outer_iter_mut() {
        r.mapv_inplace(|_| gaussian(&mut rng));
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    let mut data = Array2::zeros((n_samples, d));
    let mut supports = Vec::with_capacity(n_samples);
    for mut row in data.outer_iter_mut() {
        let s = rng.random_range(1..=max_support.min(n_atoms));
        let mut idx = rand::seq::index::sample(&mut rng, n_atoms, s).into_vec();
        idx.sort_unstable();
        for &i in &idx {
            let c: f64 = rng.random_range(lo..hi);
            row.scaled_add(c, &atoms.row(i));
        }
        supports.push(idx);
    }
    PlantedDictionary { atoms, data, supports }
}

/// One concept group of the synthetic catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureGroup {
    pub concept: String,
    /// Half-open `powlaw_gamma` range.
    pub gamma_range: (f64, f64),
    pub source_type: String,
    /// Sentences that carry the concept token.
    pub concept_sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub per_group: usize,
    pub groups: Vec<FixtureGroup>,
    /// Every `unmentioned_every`-th document omits the source name.
    pub unmentioned_every: usize,
    pub filler_sentences: usize,
    pub embedding_dim: usize,
}

const FILLER: &[&str] = &[
    "The source was detected in several archival observations.",
    "Counts were extracted from a circular aperture around the position.",
    "Background was estimated from a nearby annulus free of other detections.",
    "The field was observed with the imaging array at the nominal aim point.",
    "Absorption along the line of sight was fixed to the Galactic value.",
    "An optical counterpart is listed in a wide-field survey.",
    "The exposure time was long enough for a spectral fit.",
    "Positional uncertainty is below one arcsecond.",
    "Archival radio data were inspected for a counterpart.",
    "The light curve was binned to improve the signal.",
    "Pile-up is negligible at the observed count rate.",
    "Distance estimates come from the associated optical catalog.",
    "The source lies close to the edge of the detector.",
    "Several nearby sources were excluded from the extraction region.",
    "Flux values are quoted in the broad energy band.",
];

impl Default for FixtureSpec {
    fn default() -> Self {
        let group = |concept: &str, lo: f64, hi: f64, ty: &str, sentences: [&str; 3]| FixtureGroup {
            concept: concept.into(),
            gamma_range: (lo, hi),
            source_type: ty.into(),
            concept_sentences: sentences.iter().map(|s| s.to_string()).collect(),
        };
        Self {
            seed: 7,
            per_group: 20,
            groups: vec![
                group(
                    "non-thermal",
                    1.0,
                    1.5,
                    "AGN",
                    [
                        "The hard spectrum points to non-thermal emission from a jet.",
                        "A non-thermal component dominates above a few keV.",
                        "Authors argue the emission is non-thermal in origin.",
                    ],
                ),
                group(
                    "eclipsing",
                    2.0,
                    2.5,
                    "XB",
                    [
                        "The system is eclipsing with a well defined orbital period.",
                        "Deep eclipsing dips recur in every orbit.",
                        "Timing of the eclipsing intervals constrains the inclination.",
                    ],
                ),
                group(
                    "supersoft",
                    3.0,
                    3.5,
                    "WD",
                    [
                        "The object is a supersoft emitter with little flux above 1 keV.",
                        "Its supersoft spectrum resembles nuclear burning on a white dwarf.",
                        "Supersoft states like this one are rare and short lived.",
                    ],
                ),
            ],
            unmentioned_every: 7,
            filler_sentences: 4,
            embedding_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSource {
    pub record: SourceRecord,
    pub group: usize,
    pub context: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub sources: Vec<FixtureSource>,
}

impl FixtureSpec {
    pub fn mock_config(&self) -> MockConfig {
        MockConfig {
            seed: self.seed,
            dim: self.embedding_dim,
            concepts: self
                .groups
                .iter()
                .map(|g| Concept {
                    token: g.concept.clone(),
                    direction: None,
                })
                .collect(),
            ..MockConfig::default()
        }
    }

    pub fn generate(&self) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sources = Vec::new();
        let mut serial = 0usize;
        for (g, group) in self.groups.iter().enumerate() {
            for i in 0..self.per_group {
                serial += 1;
                let ra: f64 = rng.random_range(0.0..360.0);
                let dec: f64 = rng.random_range(-89.0..89.0);
                let name = format!("SYN J{:07.3}{:+08.3}", ra, dec);
                let alias = format!("SYN-{}{:02}", (b'A' + g as u8) as char, i + 1);
                let (lo, hi) = group.gamma_range;
                let properties = PhysicalProperties {
                    hard_hs: Some(round4(rng.random_range(-0.9..0.9))),
                    bb_kt: Some(round4(rng.random_range(0.1..3.0))),
                    powlaw_gamma: Some(round4(rng.random_range(lo..hi))),
                    var_index_b: Some(rng.random_range(0..=10)),
                    prob_index_b: Some(round4(rng.random_range(0.0..1.0))),
                };
                let record = SourceRecord {
                    source_id: format!("2CXO-SYN-{serial:03}"),
                    name_ids: vec![name.clone(), alias],
                    source_type: group.source_type.clone(),
                    sky_position: Some(SkyPosition { ra: round4(ra), dec: round4(dec) }),
                    properties,
                };

                let mut sentences: Vec<String> = FILLER
                    .choose_multiple(&mut rng, self.filler_sentences)
                    .map(|s| s.to_string())
                    .collect();
                let concept = group.concept_sentences.choose(&mut rng).expect("concept sentences").clone();
                let at = rng.random_range(0..=sentences.len());
                sentences.insert(at, concept);
                let mentioned = self.unmentioned_every == 0 || serial % self.unmentioned_every != 0;
                if mentioned {
                    sentences.insert(0, format!("Observations of {name} are reported."));
                }
                sources.push(FixtureSource {
                    record,
                    group: g,
                    context: sentences.join(" "),
                });
            }
        }
        Fixture {
            spec: self.clone(),
            sources,
        }
    }
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

impl Fixture {
    pub fn records(&self) -> Vec<SourceRecord> {
        self.sources.iter().map(|s| s.record.clone()).collect()
    }

    pub fn group_labels(&self) -> Array1<usize> {
        self.sources.iter().map(|s| s.group).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_deterministic_and_grouped() {
        let a = FixtureSpec::default().generate();
        let b = FixtureSpec::default().generate();
        assert_eq!(a, b);
        assert_eq!(a.sources.len(), 60);
        for s in &a.sources {
            let g = &a.spec.groups[s.group];
            let gamma = s.record.properties.powlaw_gamma.unwrap();
            assert!(gamma >= g.gamma_range.0 && gamma < g.gamma_range.1);
            assert!(s.context.to_lowercase().contains(&g.concept));
            for other in a.spec.groups.iter().filter(|o| o.concept != g.concept) {
                assert!(!s.context.to_lowercase().contains(&other.concept));
            }
        }
    }

    #[test]
    fn planted_supports_bounded() {
        let p = planted_dictionary(1, 20, 32, 3, 100, (0.5, 1.5));
        assert!(p.supports.iter().all(|s| (1..=3).contains(&s.len())));
        for a in p.atoms.outer_iter() {
            assert!((a.dot(&a) - 1.0).abs() < 1e-12);
        }
    }
}
