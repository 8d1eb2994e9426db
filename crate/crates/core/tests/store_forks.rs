use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use lss_core::store::NewArtifact;
use lss_core::{Kind, Store, StoreConfig};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Expected content per id, with the version count.
type Shadow = BTreeMap<String, Vec<String>>;

fn check(store: &Store, shadow: &Shadow) {
    assert_eq!(store.len(), shadow.len());
    for (id, versions) in shadow {
        let a = store.get(id).unwrap();
        assert_eq!(a.version() as usize, versions.len(), "{id}");
        assert_eq!(a.content(), versions.last().unwrap());
        for (i, v) in versions.iter().enumerate() {
            assert_eq!(a.content_at(i as u32 + 1), Some(v.as_str()));
        }
    }
}

#[test]
fn interleaved_forks_stay_isolated() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut base = Store::new(StoreConfig::default());
    let mut base_shadow = Shadow::new();
    for i in 0..5 {
        let id = format!("s{i}");
        base.put(NewArtifact::new(Kind::Skill, format!("body {i}")).id(id.as_str())).unwrap();
        base_shadow.insert(id, vec![format!("body {i}")]);
    }
    let snap = base.snapshot();
    let base_hash = base.content_hash();
    let mut forks: Vec<(Store, Shadow)> = (0..4).map(|_| (snap.fork(), base_shadow.clone())).collect();
    for n in 0..400 {
        let f = (rng.next_u32() % 4) as usize;
        let (store, shadow) = &mut forks[f];
        let target = format!("s{}", rng.next_u32() % 6);
        let body = format!("fork {f} edit {n}");
        match shadow.entry(target) {
            Entry::Occupied(mut e) => {
                store.revise(e.key(), &body, "edit", "w").unwrap();
                e.get_mut().push(body);
            }
            Entry::Vacant(e) => {
                store.put(NewArtifact::new(Kind::Skill, body.as_str()).id(e.key().as_str())).unwrap();
                e.insert(vec![body]);
            }
        }
    }
    for (store, shadow) in &forks {
        check(store, shadow);
        let mut diverged: Vec<String> = store.diverged_from(&base).iter().map(|id| id.as_str().to_string()).collect();
        diverged.sort();
        let want: Vec<String> = shadow.iter().filter(|(id, v)| base_shadow.get(*id) != Some(v)).map(|(id, _)| id.clone()).collect();
        assert_eq!(diverged, want);
    }
    check(&base, &base_shadow);
    assert_eq!(base.content_hash(), base_hash);
    assert_eq!(snap.content_hash(), base_hash);
}

#[test]
fn hash_tracks_every_edit_and_rollback_restores_content_only() {
    let mut s = Store::new(StoreConfig::default());
    s.put(NewArtifact::new(Kind::Plan, "v1").id("p")).unwrap();
    let h1 = s.content_hash();
    s.revise("p", "v2", "edit", "a").unwrap();
    let h2 = s.content_hash();
    assert_ne!(h1, h2);
    s.rollback("p", 1, "a").unwrap();
    assert_eq!(s.get("p").unwrap().content(), "v1");
    assert_ne!(s.content_hash(), h1, "rollback is a new version");
    let mut twin = Store::new(StoreConfig::default());
    twin.put(NewArtifact::new(Kind::Plan, "v1").id("p")).unwrap();
    assert_eq!(twin.content_hash(), h1);
}
