//! Seeded generator for encyclopedia-style text.
//!
//! Output mimics tokenized wiki dumps: `= Title =` headings, blank-line
//! separated paragraphs, punctuation split off by spaces. Articles cover
//! people, settlements, species and battles. Slot fillers are drawn from
//! fixed word pools with Zipf weights, so two seeds share a vocabulary but
//! not their text. Proper names are built from syllables.
//!
//! Used as a stand-in for public-domain corpora where none is available
//! locally; it is not meant to be linguistically rich.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pools are fixed across corpora so that train and held-out text overlap
/// in vocabulary.
const POOL_SEED: u64 = 0x5eed_c0de;
const ZIPF_EXPONENT: f64 = 1.07;

const SYLLABLES: &[&str] = &[
    "bar", "ken", "lo", "mir", "ta", "vel", "dor", "an", "is", "ul", "ra", "then", "gar", "wen", "sor", "el", "mo",
    "ri", "cal", "fen", "hal", "ost", "tre", "vin", "ma", "dra", "cor", "lin", "bel", "thar", "ny", "sel", "ok", "pra",
    "gu", "ste", "wal", "ber", "co", "ha",
];
const PLACE_SUFFIXES: &[&str] = &["ton", "ford", "bury", "ham", "wick", "stead", "mouth", "field", "by", "ley", ""];
const OCCUPATIONS: &[&str] = &[
    "painter", "politician", "architect", "composer", "poet", "engineer", "physician", "botanist", "novelist",
    "historian", "merchant", "officer", "priest", "sculptor", "mathematician", "journalist", "lawyer", "teacher",
    "chemist", "geologist", "actor", "singer", "explorer", "astronomer", "philosopher", "printer", "surveyor",
];
const FIELDS: &[&str] = &[
    "law", "medicine", "theology", "music", "architecture", "chemistry", "history", "mathematics", "botany",
    "philosophy", "engineering", "painting", "astronomy", "geology", "languages",
];
const ADJECTIVES: &[&str] = &[
    "small", "large", "new", "old", "important", "early", "local", "major", "national", "popular", "successful",
    "famous", "modern", "traditional", "strong", "public", "private", "short", "long", "wealthy", "poor", "ancient",
    "northern", "southern", "eastern", "western", "central", "remote", "influential", "controversial", "original",
    "unusual", "notable", "brief", "lengthy", "considerable", "severe", "mild", "warm", "cold", "dry", "wet",
];
const NOUNS: &[&str] = &[
    "work", "church", "school", "house", "bridge", "river", "town", "family", "company", "collection", "garden",
    "estate", "library", "museum", "railway", "market", "mill", "castle", "harbour", "road", "parish", "council",
    "college", "hospital", "theatre", "society", "army", "government", "war", "treaty", "book", "poem", "painting",
    "building", "monument", "festival", "trade", "factory", "mine", "farm", "forest", "island", "valley", "hill",
    "lake", "coast", "border", "province", "district", "village",
];
const VERBS: &[&str] = &[
    "built", "founded", "designed", "published", "restored", "visited", "described", "purchased",
    "expanded", "opened", "closed", "rebuilt", "studied", "completed", "abandoned", "captured", "defended",
    "supported", "opposed", "recorded", "established", "inherited", "sold", "enlarged", "painted",
];
const SETTLEMENTS: &[&str] = &["town", "village", "city", "parish", "hamlet", "borough", "municipality"];
const INDUSTRIES: &[&str] = &[
    "agriculture", "fishing", "tourism", "mining", "forestry", "textiles", "brewing", "shipbuilding", "trade",
    "manufacturing", "dairy farming", "quarrying",
];
const BUILDINGS: &[&str] = &["Church", "Chapel", "Abbey", "Cathedral", "Priory", "Hall", "Tower"];
const ANIMALS: &[&str] = &[
    "frog", "moth", "beetle", "snail", "sparrow", "owl", "lizard", "bat", "shrew", "spider", "warbler", "fish",
    "toad", "butterfly", "wasp", "gecko", "finch", "mouse",
];
const HABITATS: &[&str] = &[
    "subtropical moist lowland forest", "dry savanna", "rivers and streams", "rocky areas", "temperate forest",
    "freshwater marshes", "high altitude grassland", "plantations", "rural gardens", "coastal dunes",
];
const FOODS: &[&str] = &[
    "insects", "seeds", "fruit", "leaves", "small invertebrates", "worms", "nectar", "algae", "larvae", "grasses",
];
const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September", "October", "November",
    "December",
];
const DIRECTIONS: &[&str] = &["north", "south", "east", "west"];
const ORDINALS: &[&str] = &["first", "second", "third", "fourth", "fifth", "youngest", "eldest"];
const ORG_HEADS: &[&str] = &["Army", "Regiment", "Company", "Society", "Guard", "League", "Academy"];

struct Pools {
    given: Vec<String>,
    surnames: Vec<String>,
    places: Vec<String>,
    rivers: Vec<String>,
    countries: Vec<String>,
    genera: Vec<String>,
    families: Vec<String>,
    titles: Vec<String>,
}

fn syllable_name(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let mut s: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

fn unique_names(rng: &mut ChaCha8Rng, count: usize, mut make: impl FnMut(&mut ChaCha8Rng) -> String) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = make(rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

impl Pools {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(POOL_SEED);
        let given = unique_names(&mut rng, 240, |r| syllable_name(r, 2, 2));
        let surnames = unique_names(&mut rng, 500, |r| syllable_name(r, 2, 3));
        let places = unique_names(&mut rng, 450, |r| {
            let stem = syllable_name(r, 1, 2);
            format!("{stem}{}", PLACE_SUFFIXES.choose(r).unwrap())
        });
        let rivers = unique_names(&mut rng, 80, |r| syllable_name(r, 2, 2));
        let countries = unique_names(&mut rng, 30, |r| format!("{}ia", syllable_name(r, 1, 2)));
        let genera = unique_names(&mut rng, 120, |r| format!("{}us", syllable_name(r, 2, 2)));
        let families = unique_names(&mut rng, 40, |r| format!("{}idae", syllable_name(r, 1, 2)));
        let titles = unique_names(&mut rng, 200, |r| {
            let adj = ADJECTIVES.choose(r).unwrap();
            let noun = NOUNS.choose(r).unwrap();
            let mut t = format!("The {adj} {noun}");
            if r.random_bool(0.4) {
                t.push_str(&format!(" of {}", syllable_name(r, 2, 2)));
            }
            t
        });
        Pools {
            given,
            surnames,
            places,
            rivers,
            countries,
            genera,
            families,
            titles,
        }
    }
}

/// Zipf-weighted picker over a slice.
struct Zipf(WeightedIndex<f64>);

impl Zipf {
    fn new(n: usize) -> Self {
        let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-ZIPF_EXPONENT)).collect();
        Zipf(WeightedIndex::new(w).expect("non-empty pool"))
    }

    fn pick<'a, T: AsRef<str>>(&self, rng: &mut ChaCha8Rng, pool: &'a [T]) -> &'a str {
        pool[self.0.sample(rng)].as_ref()
    }
}

#[derive(Clone, Copy)]
enum Topic {
    Person,
    Settlement,
    Species,
    Battle,
}

/// Per-article state shared by its sentences.
struct Article {
    topic: Topic,
    name: String,
    surname: String,
    he: &'static str,
    his: &'static str,
    home: String,
    year: u32,
}

struct Generator {
    pools: Pools,
    rng: ChaCha8Rng,
    zipf: Vec<(usize, Zipf)>,
}

impl Generator {
    fn zipf_for(&mut self, n: usize) -> usize {
        match self.zipf.iter().position(|(len, _)| *len == n) {
            Some(i) => i,
            None => {
                self.zipf.push((n, Zipf::new(n)));
                self.zipf.len() - 1
            }
        }
    }

    fn pick_static(&mut self, pool: &'static [&'static str]) -> &'static str {
        let i = self.zipf_for(pool.len());
        let idx = self.zipf[i].1 .0.sample(&mut self.rng);
        pool[idx]
    }

    fn pick_pool(&mut self, which: fn(&Pools) -> &Vec<String>) -> String {
        let n = which(&self.pools).len();
        let i = self.zipf_for(n);
        self.zipf[i].1.pick(&mut self.rng, which(&self.pools)).to_string()
    }

    fn place(&mut self) -> String {
        self.pick_pool(|p| &p.places)
    }

    fn person(&mut self) -> String {
        format!("{} {}", self.pick_pool(|p| &p.given), self.pick_pool(|p| &p.surnames))
    }

    fn org(&mut self) -> String {
        let place = self.place();
        let head = self.pick_static(ORG_HEADS);
        format!("{place} {head}")
    }

    fn year_near(&mut self, base: u32) -> u32 {
        base + self.rng.random_range(0..40)
    }

    fn date(&mut self, year: u32) -> String {
        let day = self.rng.random_range(1..=28);
        let month = *MONTHS.choose(&mut self.rng).unwrap();
        format!("{day} {month} {year}")
    }

    fn new_article(&mut self) -> Article {
        let topic = match self.rng.random_range(0..10) {
            0..=3 => Topic::Person,
            4..=6 => Topic::Settlement,
            7..=8 => Topic::Species,
            _ => Topic::Battle,
        };
        let female = self.rng.random_bool(0.4);
        let (he, his) = if female { ("she", "her") } else { ("he", "his") };
        let home = self.place();
        let year = self.rng.random_range(1650..1950);
        let (name, surname) = match topic {
            Topic::Person => {
                let g = self.pick_pool(|p| &p.given);
                let s = self.pick_pool(|p| &p.surnames);
                (format!("{g} {s}"), s)
            }
            Topic::Settlement => (home.clone(), home.clone()),
            Topic::Species => {
                let adj = self.pick_static(ADJECTIVES);
                let animal = self.pick_static(ANIMALS);
                let name = format!("{} {animal}", capitalize(adj));
                (name.clone(), name)
            }
            Topic::Battle => {
                let p = self.place();
                (format!("Battle of {p}"), p)
            }
        };
        Article {
            topic,
            name,
            surname,
            he,
            his,
            home,
            year,
        }
    }

    fn sentence(&mut self, a: &Article, first: bool) -> String {
        let s = match a.topic {
            Topic::Person => self.person_sentence(a, first),
            Topic::Settlement => self.settlement_sentence(a, first),
            Topic::Species => self.species_sentence(a, first),
            Topic::Battle => self.battle_sentence(a, first),
        };
        if !first && self.rng.random_bool(0.25) {
            return self.filler_sentence(a);
        }
        s
    }

    fn filler_sentence(&mut self, a: &Article) -> String {
        let adj = self.pick_static(ADJECTIVES);
        let noun = self.pick_static(NOUNS);
        let noun2 = self.pick_static(NOUNS);
        let verb = self.pick_static(VERBS);
        let place = self.place();
        let year = self.year_near(a.year);
        match self.rng.random_range(0..6) {
            0 => format!("The {noun} of the {noun2} was {verb} in {year} ."),
            1 => format!("In {year} , the {adj} {noun} of {place} was {verb} by the {noun2} ."),
            2 => format!("It is one of the most {adj} {} in the {noun2} of {place} .", plural(noun)),
            3 => format!("A {adj} {noun} was later {verb} near the {noun2} ."),
            4 => format!("The {noun} was {verb} by the {noun2} , and the {adj} {noun2} was {verb} in {year} ."),
            _ => format!("According to the {noun2} of {place} , the {noun} was {adj} ."),
        }
    }

    fn person_sentence(&mut self, a: &Article, first: bool) -> String {
        let (he, his, sur) = (a.he, a.his, a.surname.as_str());
        let occ = self.pick_static(OCCUPATIONS);
        if first {
            let adj = self.pick_static(ADJECTIVES);
            let end = a.year + self.rng.random_range(40..85);
            return format!("{} ( {} – {end} ) was a {adj} {occ} from {} .", a.name, a.year, a.home);
        }
        let field = self.pick_static(FIELDS);
        let adj = self.pick_static(ADJECTIVES);
        let adj2 = self.pick_static(ADJECTIVES);
        let noun = self.pick_static(NOUNS);
        let verb = self.pick_static(VERBS);
        let place = self.place();
        let year = self.year_near(a.year + 15);
        match self.rng.random_range(0..12) {
            0 => {
                let ord = *ORDINALS.choose(&mut self.rng).unwrap();
                format!("{} was born in {} , the {ord} child of a {occ} .", capitalize(he), a.home)
            }
            1 => format!("In {year} , {he} moved to {place} to study {field} at the University of {} .", self.place()),
            2 => {
                let title = self.pick_pool(|p| &p.titles);
                format!("{} first major work , {title} , was published in {year} .", capitalize(his))
            }
            3 => format!("{sur} became known for {his} {adj} {noun} and {his} work on {field} ."),
            4 => format!("During the war , {he} served as a {occ} in the {} .", self.org()),
            5 => {
                let spouse = self.person();
                let n = self.rng.random_range(2..9);
                format!("{} married {spouse} in {year} , and they had {n} children .", capitalize(he))
            }
            6 => {
                let date = self.date(year + 30);
                format!("{sur} died in {place} on {date} .")
            }
            7 => format!("Critics described {his} later work as {adj} and {adj2} ."),
            8 => format!("{} {verb} the {noun} at {place} in {year} .", capitalize(he)),
            9 => format!("{} {noun} was later held by the {} .", capitalize(his), self.org()),
            10 => format!("{sur} was elected to the {} in {year} .", self.org()),
            _ => format!("{} returned to {} in {year} , where {he} {verb} a {adj} {noun} .", capitalize(he), a.home),
        }
    }

    fn settlement_sentence(&mut self, a: &Article, first: bool) -> String {
        let settle = self.pick_static(SETTLEMENTS);
        let country = self.pick_pool(|p| &p.countries);
        if first {
            let adj = self.pick_static(ADJECTIVES);
            return format!("{} is a {adj} {settle} in the {} region of {country} .", a.name, self.place());
        }
        let adj = self.pick_static(ADJECTIVES);
        let adj2 = self.pick_static(ADJECTIVES);
        let noun = self.pick_static(NOUNS);
        let year = self.year_near(a.year);
        match self.rng.random_range(0..10) {
            0 => {
                let pop = self.rng.random_range(300..90000);
                format!("The population was {pop} at the {} census .", self.rng.random_range(1850..2012))
            }
            1 => {
                let dir = *DIRECTIONS.choose(&mut self.rng).unwrap();
                let river = self.pick_pool(|p| &p.rivers);
                let km = self.rng.random_range(2..120);
                format!("The {settle} lies on the {dir} bank of the {river} River , about {km} kilometres from {} .", self.place())
            }
            2 => format!("It was first recorded in {year} as a {adj} {noun} ."),
            3 => {
                let i1 = self.pick_static(INDUSTRIES);
                let i2 = self.pick_static(INDUSTRIES);
                format!("The local economy is based on {i1} and {i2} .")
            }
            4 => format!("{} has a {adj} climate , with {adj2} summers and {} winters .", a.name, self.pick_static(ADJECTIVES)),
            5 => {
                let b = self.pick_static(BUILDINGS);
                let saint = self.pick_pool(|p| &p.given);
                format!("The {b} of Saint {saint} was built in {year} and is the oldest building in the {settle} .")
            }
            6 => format!("The {settle} is served by a railway station on the line between {} and {} .", self.place(), self.place()),
            7 => format!("The {noun} of {} was {} in {year} .", a.name, self.pick_static(VERBS)),
            8 => format!("Notable people from {} include the {} {} .", a.name, self.pick_static(OCCUPATIONS), self.person()),
            _ => format!("In {year} , the {settle} was granted a {adj} market by the {} .", self.org()),
        }
    }

    fn species_sentence(&mut self, a: &Article, first: bool) -> String {
        if first {
            let genus = self.pick_pool(|p| &p.genera);
            let epithet = self.pick_pool(|p| &p.rivers).to_lowercase();
            let family = self.pick_pool(|p| &p.families);
            let animal = self.pick_static(ANIMALS);
            return format!("The {} ( {genus} {epithet} ) is a species of {animal} in the family {family} .", a.name);
        }
        let year = self.year_near(a.year);
        match self.rng.random_range(0..8) {
            0 => {
                let c1 = self.pick_pool(|p| &p.countries);
                let c2 = self.pick_pool(|p| &p.countries);
                let h = self.pick_static(HABITATS);
                format!("It is found in {c1} and {c2} , where its natural habitat is {h} .")
            }
            1 => format!("The species was first described by {} in {year} .", self.pick_pool(|p| &p.surnames)),
            2 => format!("Adults grow to a length of about {} centimetres .", self.rng.random_range(1..60)),
            3 => {
                let f1 = self.pick_static(FOODS);
                let f2 = self.pick_static(FOODS);
                format!("It feeds mainly on {f1} and {f2} .")
            }
            4 => format!("The {} is threatened by habitat loss .", a.name.to_lowercase()),
            5 => {
                let adj = self.pick_static(ADJECTIVES);
                format!("The wings are {adj} with a {} band near the {} .", self.pick_static(ADJECTIVES), self.pick_static(NOUNS))
            }
            6 => format!("Breeding takes place between {} and {} .", MONTHS.choose(&mut self.rng).unwrap(), MONTHS.choose(&mut self.rng).unwrap()),
            _ => format!("It is common in the {} of {} .", self.pick_static(NOUNS), self.place()),
        }
    }

    fn battle_sentence(&mut self, a: &Article, first: bool) -> String {
        if first {
            let date = self.date(a.year);
            return format!("The {} was fought on {date} between the {} and the {} .", a.name, self.org(), self.org());
        }
        let year = a.year;
        match self.rng.random_range(0..8) {
            0 => format!("The {} , commanded by {} , numbered about {} men .", self.org(), self.person(), self.rng.random_range(5..400) * 100),
            1 => format!("After {} hours of fighting , the {} withdrew towards {} .", self.rng.random_range(2..30), self.org(), self.place()),
            2 => format!("Casualties on both sides were {} .", self.pick_static(ADJECTIVES)),
            3 => format!("The battle is commemorated by a {} near {} .", self.pick_static(NOUNS), a.surname),
            4 => format!("In {} , a treaty was signed at {} .", year + 1, self.place()),
            5 => format!("The {} {} the {} of {} before the battle .", self.org(), self.pick_static(VERBS), self.pick_static(NOUNS), self.place()),
            6 => format!("{} was later promoted for {} conduct at {} .", self.person(), self.pick_static(ADJECTIVES), a.surname),
            _ => format!("The war ended in {} .", year + self.rng.random_range(1..6)),
        }
    }

    fn paragraph(&mut self, a: &Article, lead: bool) -> String {
        let target = self.rng.random_range(170..320);
        let mut words = 0;
        let mut out = Vec::new();
        while words < target {
            let s = self.sentence(a, lead && out.is_empty());
            words += s.split_whitespace().count();
            out.push(s);
        }
        fix_articles(&out.join(" "))
    }
}

fn plural(noun: &str) -> String {
    if noun.ends_with("ch") || noun.ends_with("sh") || noun.ends_with('s') || noun.ends_with('x') {
        format!("{noun}es")
    } else if let Some(stem) = noun.strip_suffix('y').filter(|s| !s.ends_with(['a', 'e', 'o', 'u'])) {
        format!("{stem}ies")
    } else {
        format!("{noun}s")
    }
}

/// Rewrites `a` to `an` before a vowel-initial word.
fn fix_articles(text: &str) -> String {
    let words: Vec<&str> = text.split(' ').collect();
    let mut out = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let next_vowel = words
            .get(i + 1)
            .and_then(|n| n.chars().next())
            .is_some_and(|c| "aeiouAEIOU".contains(c));
        out.push(match *w {
            "a" if next_vowel => "an",
            "A" if next_vowel => "An",
            _ => w,
        });
    }
    out.join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Generates at least `min_bytes` of text. Output is a pure function of
/// `(seed, min_bytes)`.
pub fn generate_corpus(seed: u64, min_bytes: usize) -> String {
    let mut g = Generator {
        pools: Pools::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        zipf: Vec::new(),
    };
    let mut out = String::with_capacity(min_bytes + 4096);
    while out.len() < min_bytes {
        let a = g.new_article();
        out.push_str(&format!("= {} =\n\n", a.name));
        let paragraphs = g.rng.random_range(1..=3);
        for i in 0..paragraphs {
            out.push_str(&g.paragraph(&a, i == 0));
            out.push_str("\n\n");
        }
    }
    out
}
