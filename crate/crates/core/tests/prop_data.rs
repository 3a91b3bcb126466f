use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use phantomforge::catalog::{
    filter_manifests, PatientSnapshot, PhantomFilter, PhantomManifest, StructureEntry,
};
use phantomforge::grid::{read_label_grid, write_label_grid, GridFormat, VoxelGrid};
use phantomforge::qc::{FinalStatus, QcOutcome};
use phantomforge::taxonomy::{Group, Sex, StructureDef, Taxonomy};
use phantomforge::volumetry::{dice, structure_volumes, LabelTally, VolumeTable};

fn grid() -> impl Strategy<Value = VoxelGrid> {
    (
        prop::array::uniform3(1usize..9),
        prop::array::uniform3(0.1f64..4.0),
        prop::array::uniform3(-200.0f64..200.0),
    )
        .prop_flat_map(|(dims, spacing, origin)| {
            let n = dims[0] * dims[1] * dims[2];
            prop::collection::vec(prop_oneof![3 => Just(0u16), 2 => 1u16..20, 1 => any::<u16>()], n)
                .prop_map(move |labels| VoxelGrid::new(dims, spacing, origin, labels).unwrap())
        })
}

fn sex() -> impl Strategy<Value = Sex> {
    prop_oneof![Just(Sex::Male), Just(Sex::Female), Just(Sex::Unknown)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raw_round_trip_is_exact(g in grid(), compress in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.lvol");
        write_label_grid(&g, &path, compress).unwrap();
        let back = read_label_grid(&path, GridFormat::from_path(&path)).unwrap();
        prop_assert_eq!(back.labels(), g.labels());
        prop_assert_eq!(back.template(), g.template());
    }

    #[test]
    fn volumes_ignore_visit_order(g in grid(), seed in any::<u64>()) {
        let tax = Taxonomy::bundled();
        let whole = structure_volumes(&g, &tax);
        let mut labels = g.labels().to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut tally = LabelTally::default();
        for chunk in labels.chunks(7) {
            tally.add_slice(chunk);
        }
        let shuffled = VolumeTable::from_tally(g.template(), &tally, &tax);
        prop_assert_eq!(whole, shuffled);
    }

    #[test]
    fn dice_is_symmetric(a in grid(), seed in any::<u64>()) {
        let mut labels = a.labels().to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = VoxelGrid::from_template(*a.template(), labels).unwrap();
        prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        if a.labels().iter().any(|&v| v != 0) {
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn taxonomy_pairs_and_sex_sets(
        n in 2usize..60,
        pairs in 0usize..15,
        tags in prop::collection::vec((0u8..3, any::<bool>()), 60),
        seed in any::<u64>(),
    ) {
        let mut ids: Vec<u16> = (1..=n as u16).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pairs = pairs.min(n / 2);
        let mut partner = BTreeMap::new();
        for p in 0..pairs {
            let (l, r) = (ids[2 * p], ids[2 * p + 1]);
            partner.insert(l, r);
            partner.insert(r, l);
        }
        let structures: Vec<StructureDef> = (1..=n as u16)
            .map(|id| {
                let (tag, expected) = tags[id as usize - 1];
                let paired = partner.contains_key(&id);
                StructureDef {
                    id,
                    name: format!("x{id}"),
                    group: Group::General,
                    pair_id: partner.get(&id).copied(),
                    sex_specific: match tag {
                        1 if !paired => Some(Sex::Male),
                        2 if !paired => Some(Sex::Female),
                        _ => None,
                    },
                    expected,
                }
            })
            .collect();
        let tax = Taxonomy::from_parts(structures.clone(), None, None).unwrap();

        let sp = tax.symmetric_pairs();
        let mut seen = BTreeSet::new();
        for &(l, r) in &sp {
            prop_assert_ne!(l, r);
            prop_assert!(seen.insert(l) && seen.insert(r));
        }
        prop_assert_eq!(sp.len(), pairs);

        let all: BTreeSet<u16> = structures.iter().filter(|s| s.expected).map(|s| s.id).collect();
        let male = tax.expected_structures(Sex::Male);
        let female = tax.expected_structures(Sex::Female);
        prop_assert!(male.union(&female).all(|id| all.contains(id)));
        let specific: BTreeSet<u16> = structures
            .iter()
            .filter(|s| s.expected && s.sex_specific.is_some())
            .map(|s| s.id)
            .collect();
        let diff: BTreeSet<u16> = male.symmetric_difference(&female).copied().collect();
        prop_assert_eq!(diff, specific);
        prop_assert_eq!(tax.expected_structures(Sex::Unknown), all);
    }
}

fn manifest(i: usize, sex: Sex, age: f64, habitus: Option<(f64, f64)>, race: &str, present: &[u16], status: FinalStatus) -> PhantomManifest {
    let id = format!("S{i:04}");
    PhantomManifest {
        phantom_id: id.clone(),
        scan_id: id.clone(),
        patient: PatientSnapshot {
            patient_id: format!("P{i:04}"),
            sex,
            age_years: age,
            height_m: habitus.map(|h| h.0),
            weight_kg: habitus.map(|h| h.1),
            bmi: habitus.map(|(h, w)| w / (h * h)),
            race: race.into(),
        },
        structures: present
            .iter()
            .map(|&sid| StructureEntry {
                id: sid,
                name: format!("s{sid}"),
                volume_ml: 1.0,
                mesh_path: None,
                mask: format!("scans/{id}/volume.lvol#label={sid}"),
            })
            .collect(),
        qc: QcOutcome {
            scan_id: id.clone(),
            patient_id: format!("P{i:04}"),
            age_pass: true,
            symmetry: None,
            zero_volume: None,
            statistical: None,
            mean_p_out: None,
            review: None,
            final_status: status,
        },
        review_rating: None,
        voxel_phantoms: vec![],
        smoothing: None,
        pipeline_version: "test".into(),
        created_at: chrono::DateTime::from_timestamp(0, 0).unwrap(),
    }
}

fn manifests() -> impl Strategy<Value = BTreeMap<String, PhantomManifest>> {
    let status = prop_oneof![
        3 => Just(FinalStatus::Accepted),
        1 => Just(FinalStatus::PendingReview),
        1 => Just(FinalStatus::RejectedSymmetry),
        1 => Just(FinalStatus::SupersededDuplicate),
    ];
    let race = prop::sample::select(vec!["white", "Black", "asian", "other"]);
    let one = (
        sex(),
        14.0f64..95.0,
        prop::option::weighted(0.8, (1.4f64..2.0, 40.0f64..130.0)),
        race,
        prop::collection::btree_set(1u16..8, 0..7),
        status,
    );
    prop::collection::vec(one, 0..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (sex, age, hab, race, present, status))| {
                let present: Vec<u16> = present.into_iter().collect();
                let m = manifest(i, sex, age, hab, race, &present, status);
                (m.phantom_id.clone(), m)
            })
            .collect()
    })
}

fn filter() -> impl Strategy<Value = PhantomFilter> {
    (
        prop::option::of(sex()),
        prop::option::of(14.0f64..95.0),
        prop::option::of(0.0f64..60.0),
        prop::option::of(prop::sample::select(vec!["white", "black", "ASIAN", "none"])),
        prop::option::of(10.0f64..60.0),
        prop::option::of(0.0f64..40.0),
        prop::option::of(1u16..9),
        any::<bool>(),
    )
        .prop_map(|(sex, age_min, age_span, race, bmi_min, bmi_span, structure, include_all)| PhantomFilter {
            sex,
            age_min,
            age_max: age_span.map(|s| age_min.unwrap_or(14.0) + s),
            race: race.map(str::to_string),
            bmi_min,
            bmi_max: bmi_span.map(|s| bmi_min.unwrap_or(10.0) + s),
            structure,
            include_all,
        })
}

/// Each predicate written out independently of the library.
fn oracle(f: &PhantomFilter, m: &PhantomManifest) -> bool {
    let p = &m.patient;
    if !f.include_all && m.qc.final_status != FinalStatus::Accepted {
        return false;
    }
    if let Some(s) = f.sex {
        if p.sex != s {
            return false;
        }
    }
    if f.age_min.is_some_and(|lo| p.age_years < lo) || f.age_max.is_some_and(|hi| p.age_years > hi) {
        return false;
    }
    if let Some(r) = &f.race {
        if r.to_lowercase() != p.race.to_lowercase() {
            return false;
        }
    }
    if f.bmi_min.is_some() || f.bmi_max.is_some() {
        let Some(b) = p.bmi else { return false };
        if f.bmi_min.is_some_and(|lo| b < lo) || f.bmi_max.is_some_and(|hi| b > hi) {
            return false;
        }
    }
    if let Some(sid) = f.structure {
        if !m.structures.iter().any(|e| e.id == sid) {
            return false;
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn query_matches_brute_force(ms in manifests(), f in filter()) {
        let got: Vec<&str> = filter_manifests(&ms, &f)
            .unwrap()
            .into_iter()
            .map(|m| m.phantom_id.as_str())
            .collect();
        let want: Vec<&str> = ms.values().filter(|m| oracle(&f, m)).map(|m| m.phantom_id.as_str()).collect();
        prop_assert_eq!(&got, &want);
        prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn inverted_ranges_are_rejected(ms in manifests(), lo in 20.0f64..80.0, gap in 0.001f64..10.0) {
        let f = PhantomFilter { age_min: Some(lo), age_max: Some(lo - gap), ..PhantomFilter::default() };
        prop_assert!(filter_manifests(&ms, &f).is_err());
        let f = PhantomFilter { bmi_min: Some(lo), bmi_max: Some(lo - gap), ..PhantomFilter::default() };
        prop_assert!(filter_manifests(&ms, &f).is_err());
    }
}
