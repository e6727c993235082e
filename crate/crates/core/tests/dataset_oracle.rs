use mvfd::dataset::{generate, Class, GenerateConfig};
use mvfd_testkit::{nearest_main, nearest_two_view};

fn noise_free() -> Vec<mvfd::dataset::MultiViewSample> {
    generate(&GenerateConfig {
        counts: [20, 40, 40, 20],
        noise_level: 0.0,
        seed: 11,
        ..GenerateConfig::default()
    })
    .unwrap()
}

#[test]
fn main_view_alone_cannot_tell_crack_from_void() {
    let data = noise_free();
    let subset: Vec<_> = data.iter().filter(|s| matches!(s.label, Class::Crack | Class::Void)).collect();
    assert_eq!(subset.len(), 80);
    // Restricted to the binary problem: anything that is not Void counts as Crack.
    let hits = subset
        .iter()
        .filter(|s| {
            let guess = if nearest_main(s) == Class::Void { Class::Void } else { Class::Crack };
            guess == s.label
        })
        .count();
    let acc = hits as f64 / subset.len() as f64;
    assert!(acc <= 0.60, "main-view Crack/Void accuracy {acc}");
}

#[test]
fn both_views_separate_every_class() {
    let data = noise_free();
    let wrong: Vec<_> = data.iter().filter(|s| nearest_two_view(s) != s.label).map(|s| s.id).collect();
    assert!(wrong.is_empty(), "misclassified ids {wrong:?}");
}
