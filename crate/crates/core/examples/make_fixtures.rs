//! Regenerates the replay fixtures under `tests/fixtures/`.
//!
//! A scripted stand-in LLM answers every prompt from a small table of facts
//! per scenario, and a hashing embedder stands in for the embedding model.
//! Both are wrapped in recording backends, so the pipeline runs below leave
//! behind exactly the fixtures a replay run needs.
//!
//! ```text
//! cargo run --example make_fixtures
//! EDC_BLESS=1 cargo test --test acceptance   # then refresh the golden files
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use edc::canonicalize::CanonMode;
use edc::embedding::{
    build_relation_index, embed, Embedder, HashingEmbedder, IndexMode, RecordingEmbedding,
    RetrievalInstruction,
};
use edc::gateway::parse::{
    choice_letter, format_string_list, format_triplet_list, parse_triplet_list,
};
use edc::gateway::{Gateway, GatewayConfig, RecordingChat, ScriptedChat};
use edc::io;
use edc::prompts::FewShotRecord;
use edc::refine::{run_define_canonicalize, run_edc_r, Backends, PipelineConfig};
use edc::{Document, RelationDefinition, Schema, Triplet};

const EMBED_DIM: usize = 128;

fn t(s: &str, r: &str, o: &str) -> Triplet {
    Triplet::new(s, r, o).expect("valid triplet")
}

struct DocScript {
    base: Vec<Triplet>,
    refined: Option<Vec<Triplet>>,
    entities: Vec<String>,
}

/// What the stand-in LLM knows about one scenario.
#[derive(Default)]
struct World {
    docs: HashMap<String, DocScript>,
    definitions: HashMap<String, String>,
    clusters: Vec<Vec<String>>,
}

fn after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let start = prompt.rfind(marker)? + marker.len();
    Some(prompt[start..].trim_start_matches('\n'))
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

impl World {
    fn doc(
        &mut self,
        text: &str,
        base: Vec<Triplet>,
        refined: Option<Vec<Triplet>>,
        extra_entities: &[&str],
    ) {
        let mut entities: Vec<String> = Vec::new();
        for tr in refined.iter().flatten().chain(&base) {
            for e in [tr.subject(), tr.object()] {
                if !entities.iter().any(|x| x == e) {
                    entities.push(e.to_string());
                }
            }
        }
        entities.extend(extra_entities.iter().map(|s| s.to_string()));
        self.docs.insert(
            text.to_string(),
            DocScript {
                base,
                refined,
                entities,
            },
        );
    }

    fn define(&mut self, name: &str, definition: &str) {
        self.definitions
            .insert(name.to_string(), definition.to_string());
    }

    fn cluster(&mut self, names: &[&str]) {
        self.clusters
            .push(names.iter().map(|s| s.to_string()).collect());
    }

    fn same_cluster(&self, a: &str, b: &str) -> bool {
        a == b
            || self
                .clusters
                .iter()
                .any(|c| c.iter().any(|x| x == a) && c.iter().any(|x| x == b))
    }

    fn respond(&self, prompt: &str) -> Option<String> {
        if prompt.starts_with("Given a piece of text, a relational triplet") {
            return self.answer_mcq(prompt);
        }
        if prompt.starts_with("Given a piece of text and a list of relational triplets") {
            let triplets = parse_triplet_list(first_line(after(prompt, "\nTriplets: ")?)).value;
            let mut seen = Vec::new();
            let mut out = Vec::new();
            for tr in &triplets {
                if seen.contains(&tr.relation()) {
                    continue;
                }
                seen.push(tr.relation());
                out.push(format!(
                    "{}: {}",
                    tr.relation(),
                    self.definitions.get(tr.relation())?
                ));
            }
            return Some(out.join("\n"));
        }
        if prompt.starts_with("Given a piece of text, extract a list of entities") {
            let text = after(
                prompt,
                "Now please extract entities from the following text:",
            )?;
            return Some(format_string_list(
                &self.docs.get(first_line(text))?.entities,
            ));
        }
        if prompt.starts_with("Given a piece of text, extract relational triplets") {
            let rest = after(
                prompt,
                "Now please extract triplets from the following text:",
            )?;
            let doc = self.docs.get(first_line(rest))?;
            let hinted = rest.contains("\nEntities: ") || rest.contains("potential relations");
            let triplets = match (&doc.refined, hinted) {
                (Some(r), true) => r,
                _ => &doc.base,
            };
            return Some(format_triplet_list(triplets));
        }
        None
    }

    fn answer_mcq(&self, prompt: &str) -> Option<String> {
        let rel = after(prompt, "Definition of '")?.split('\'').next()?;
        let choices = after(prompt, "Choices:")?;
        let mut n = 0;
        for line in choices.lines().filter(|l| !l.trim().is_empty()) {
            let Some((_, rest)) = line.split_once(". '") else {
                break;
            };
            let name = rest.split('\'').next()?;
            if self.same_cluster(rel, name) {
                return Some(choice_letter(n).to_string());
            }
            n += 1;
        }
        Some(choice_letter(n).to_string())
    }
}

fn embedder_model() -> HashingEmbedder {
    HashingEmbedder::new(EMBED_DIM)
        .with_synonyms("birth", &["born", "birth", "birthplace"])
        .with_synonyms(
            "employ",
            &["works", "work", "employer", "employed", "employs", "employ"],
        )
        .with_synonyms(
            "author",
            &["written", "wrote", "author", "authored", "writer"],
        )
        .with_synonyms("found", &["founded", "founding", "established"])
        .with_synonyms("locate", &["located", "location", "situated"])
        .with_synonyms("marry", &["married", "spouse", "wife", "husband"])
}

struct Recorder {
    gateway: Gateway,
    embedder: Embedder,
}

impl Recorder {
    fn new(world: World, replay: &Path) -> Self {
        let world = Arc::new(world);
        let chat = ScriptedChat::new("fixture-world", move |prompt: &str| {
            world
                .respond(prompt)
                .ok_or_else(|| ScriptedChat::unresolved(prompt))
        });
        Recorder {
            gateway: Gateway::new(
                Arc::new(RecordingChat::new(chat, replay.join("chat"))),
                GatewayConfig::default(),
            ),
            embedder: Embedder::new(
                RecordingEmbedding::new(embedder_model(), replay.join("embedding")),
                4,
            ),
        }
    }

    fn backends(&self) -> Backends<'_> {
        Backends {
            gateway: &self.gateway,
            embedder: &self.embedder,
            retriever: &self.embedder,
        }
    }
}

fn pipeline(few_shot: &[FewShotRecord], mode: CanonMode, iterations: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.canon.mode = mode;
    cfg.iterations = iterations;
    cfg.oie.few_shot = few_shot.to_vec();
    cfg
}

fn few_shot_records() -> Vec<FewShotRecord> {
    fn defs(pairs: &[(&str, &str)]) -> Option<IndexMap<String, String>> {
        Some(
            pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }
    vec![
        FewShotRecord {
            text: "The 17068.8 millimeter long ALCO RS-3 has a diesel-electric transmission.".into(),
            triplets: Some(vec![
                t("ALCO RS-3", "powerType", "Diesel-electric transmission"),
                t("ALCO RS-3", "length", "17068.8 (millimetres)"),
            ]),
            entities: Some(vec![
                "ALCO RS-3".into(),
                "Diesel-electric transmission".into(),
                "17068.8 (millimetres)".into(),
            ]),
            definitions: defs(&[
                (
                    "powerType",
                    "The subject entity uses the type of power or energy source specified by the object entity.",
                ),
                ("length", "The subject entity has the physical length specified by the object entity."),
            ]),
        },
        FewShotRecord {
            text: "Aarhus Airport serves the city of Aarhus and has a runway named 10R/28L.".into(),
            triplets: Some(vec![
                t("Aarhus Airport", "cityServed", "Aarhus"),
                t("Aarhus Airport", "runwayName", "10R/28L"),
            ]),
            entities: None,
            definitions: defs(&[
                ("cityServed", "The subject entity is an airport serving the city specified by the object entity."),
                ("runwayName", "The subject entity has a runway with the name specified by the object entity."),
            ]),
        },
        FewShotRecord {
            text: "The Acharya Institute of Technology in Bangalore was established in 2000.".into(),
            triplets: Some(vec![
                t("Acharya Institute of Technology", "city", "Bangalore"),
                t("Acharya Institute of Technology", "established", "2000"),
            ]),
            entities: None,
            definitions: defs(&[
                ("city", "The subject entity is located in the city specified by the object entity."),
                ("established", "The subject entity was established in the year specified by the object entity."),
            ]),
        },
    ]
}

fn schema(entries: &[(&str, &str)]) -> Schema {
    let defs: Vec<RelationDefinition> = entries
        .iter()
        .map(|(n, d)| RelationDefinition::new(n, d).expect("valid relation"))
        .collect();
    Schema::from_definitions(defs).expect("unique names")
}

const SHEPARD_TEXT: &str =
    "Alan Shepard was born on Nov 18, 1923 and selected by NASA in 1959. He was a member of the Apollo 14 crew.";

fn alan_shepard(root: &Path, few_shot: &[FewShotRecord]) {
    let dir = root.join("alan_shepard");
    reset(&dir);
    let mut w = World::default();
    w.doc(
        SHEPARD_TEXT,
        vec![
            t("Alan Shepard", "bornOn", "Nov 18, 1923"),
            t("Alan Shepard", "participatedIn", "Apollo 14"),
        ],
        Some(vec![
            t("Alan Shepard", "birthDate", "Nov 18, 1923"),
            t("Alan Shepard", "mission", "Apollo 14"),
            t("Alan Shepard", "selectedByNasa", "1959"),
        ]),
        &["NASA", "1959"],
    );
    // Keep the entity order of the worked example.
    w.docs.get_mut(SHEPARD_TEXT).unwrap().entities =
        ["Alan Shepard", "Nov 18, 1923", "NASA", "1959", "Apollo 14"]
            .map(String::from)
            .to_vec();
    w.define(
        "bornOn",
        "The subject entity was born on the date specified by the object entity.",
    );
    w.define(
        "participatedIn",
        "The subject entity took part in the event or mission specified by the object entity.",
    );
    let target = schema(&[
        ("birthDate", "The subject entity was born on the date specified by the object entity."),
        ("mission", "The subject entity participated in the event or operation specified by the object entity."),
        ("selectedByNasa", "The subject entity was selected by NASA in the year specified by the object entity."),
        ("season", "The subject entity participated in the season of a series specified by the object entity."),
        ("draftPick", "The subject entity was chosen at the draft pick number specified by the object entity."),
        ("occupation", "The subject entity has the occupation or profession specified by the object entity."),
        ("nationality", "The subject entity is a citizen of the country specified by the object entity."),
        ("birthPlace", "The subject entity was born in the place specified by the object entity."),
        ("deathPlace", "The subject entity died in the place specified by the object entity."),
        ("almaMater", "The subject entity studied at the school or university specified by the object entity."),
        ("award", "The subject entity received the award specified by the object entity."),
        ("employer", "The subject entity works for the organization specified by the object entity."),
        ("spouse", "The subject entity is married to the person specified by the object entity."),
        ("timeInSpace", "The subject entity spent the amount of time in space specified by the object entity."),
        ("status", "The subject entity has the living status specified by the object entity."),
    ]);
    for r in target.iter() {
        w.define(&r.name, &r.definition);
    }
    w.cluster(&["bornOn", "birthDate"]);
    w.cluster(&["participatedIn", "mission"]);

    let docs = vec![Document {
        id: "shepard".into(),
        text: SHEPARD_TEXT.into(),
        reference_triplets: Some(vec![
            t("Alan Shepard", "birthDate", "Nov 18, 1923"),
            t("Alan Shepard", "selectedByNasa", "1959"),
            t("Alan Shepard", "mission", "Apollo 14"),
        ]),
    }];
    write_inputs(&dir, &docs, &target, few_shot);
    let rec = Recorder::new(w, &dir.join("replay"));
    let cfg = pipeline(few_shot, CanonMode::TargetAlignment, 1);
    let out = run_edc_r(&docs, Some(&target), &cfg, rec.backends()).expect("alan shepard run");
    report("alan_shepard", &out.records);
}

struct CorpusDoc {
    text: &'static str,
    base: Vec<Triplet>,
    refined: Option<Vec<Triplet>>,
    reference: Vec<Triplet>,
}

fn corpus_docs() -> Vec<CorpusDoc> {
    let d = |text, base, refined, reference| CorpusDoc {
        text,
        base,
        refined,
        reference,
    };
    vec![
        d(
            "Mara Lindqvist was born in Uppsala and works for Nordlys Energy.",
            vec![t("Mara Lindqvist", "bornIn", "Uppsala"), t("Mara Lindqvist", "worksFor", "Nordlys Energy")],
            None,
            vec![t("Mara Lindqvist", "birthPlace", "Uppsala"), t("Mara Lindqvist", "employer", "Nordlys Energy")],
        ),
        d(
            "The novel Glass Harbor was written by Ines Okafor.",
            vec![t("Glass Harbor", "writtenBy", "Ines Okafor")],
            None,
            vec![t("Glass Harbor", "author", "Ines Okafor")],
        ),
        d(
            "Tobias Renn, whose birthplace is Graz, is employed by Alpine Rail.",
            vec![t("Tobias Renn", "birthPlace", "Graz"), t("Tobias Renn", "employedBy", "Alpine Rail")],
            None,
            vec![t("Tobias Renn", "birthPlace", "Graz"), t("Tobias Renn", "employer", "Alpine Rail")],
        ),
        d(
            "Kestrel Labs is located in Tartu and was founded in 2009.",
            vec![t("Kestrel Labs", "locatedIn", "Tartu"), t("Kestrel Labs", "foundedIn", "2009")],
            None,
            vec![t("Kestrel Labs", "locatedIn", "Tartu"), t("Kestrel Labs", "foundingYear", "2009")],
        ),
        d(
            "Ines Okafor is married to Daniel Okafor.",
            vec![t("Ines Okafor", "spouse", "Daniel Okafor")],
            None,
            vec![t("Ines Okafor", "spouse", "Daniel Okafor")],
        ),
        d(
            "The essay collection Salt Lines was authored by Mara Lindqvist.",
            vec![t("Salt Lines", "authoredBy", "Mara Lindqvist")],
            None,
            vec![t("Salt Lines", "author", "Mara Lindqvist")],
        ),
        d(
            "Priya Nandakumar's place of birth is Kochi, and she enjoys chess.",
            vec![t("Priya Nandakumar", "placeOfBirth", "Kochi"), t("Priya Nandakumar", "hobby", "chess")],
            None,
            vec![t("Priya Nandakumar", "birthPlace", "Kochi")],
        ),
        d(
            "Alpine Rail is located in Innsbruck.",
            vec![t("Alpine Rail", "locatedIn", "Innsbruck")],
            None,
            vec![t("Alpine Rail", "locatedIn", "Innsbruck")],
        ),
        d(
            "Daniel Okafor works for Kestrel Labs and was born in Lagos.",
            vec![t("Daniel Okafor", "worksFor", "Kestrel Labs")],
            Some(vec![t("Daniel Okafor", "employer", "Kestrel Labs"), t("Daniel Okafor", "birthPlace", "Lagos")]),
            vec![t("Daniel Okafor", "employer", "Kestrel Labs"), t("Daniel Okafor", "birthPlace", "Lagos")],
        ),
        d(
            "The author of Quiet Orbit is Tobias Renn.",
            vec![t("Quiet Orbit", "author", "Tobias Renn")],
            None,
            vec![t("Quiet Orbit", "author", "Tobias Renn")],
        ),
        d(
            "Nordlys Energy, founded in 1987, has its headquarters located in Bergen.",
            vec![t("Nordlys Energy", "foundedIn", "1987")],
            Some(vec![t("Nordlys Energy", "foundingYear", "1987"), t("Nordlys Energy", "locatedIn", "Bergen")]),
            vec![t("Nordlys Energy", "foundingYear", "1987"), t("Nordlys Energy", "locatedIn", "Bergen")],
        ),
        d(
            "Lena Ferreira is employed by Nordlys Energy and married to Tobias Renn.",
            vec![t("Lena Ferreira", "employedBy", "Nordlys Energy"), t("Lena Ferreira", "spouse", "Tobias Renn")],
            None,
            vec![t("Lena Ferreira", "employer", "Nordlys Energy"), t("Lena Ferreira", "spouse", "Tobias Renn")],
        ),
        d(
            "Lena Ferreira was born in Porto.",
            vec![t("Lena Ferreira", "bornIn", "Porto")],
            None,
            vec![t("Lena Ferreira", "birthPlace", "Porto")],
        ),
        d(
            "Field Notes on Rain was written by Priya Nandakumar, who works for Alpine Rail.",
            vec![t("Field Notes on Rain", "writtenBy", "Priya Nandakumar")],
            Some(vec![
                t("Field Notes on Rain", "author", "Priya Nandakumar"),
                t("Priya Nandakumar", "employer", "Alpine Rail"),
            ]),
            vec![
                t("Field Notes on Rain", "author", "Priya Nandakumar"),
                t("Priya Nandakumar", "employer", "Alpine Rail"),
            ],
        ),
        d(
            "Harbor Analytics is located in Gdansk, and Marek Zielinski's employer is Harbor Analytics.",
            vec![t("Harbor Analytics", "locatedIn", "Gdansk"), t("Marek Zielinski", "employer", "Harbor Analytics")],
            None,
            vec![t("Harbor Analytics", "locatedIn", "Gdansk"), t("Marek Zielinski", "employer", "Harbor Analytics")],
        ),
        d(
            "Marek Zielinski was born in Krakow and enjoys sailing.",
            vec![t("Marek Zielinski", "bornIn", "Krakow"), t("Marek Zielinski", "hobby", "sailing")],
            None,
            vec![t("Marek Zielinski", "birthPlace", "Krakow")],
        ),
        d(
            "The guidebook Northern Trails was authored by Lena Ferreira.",
            vec![t("Northern Trails", "authoredBy", "Lena Ferreira")],
            None,
            vec![t("Northern Trails", "author", "Lena Ferreira")],
        ),
        d(
            "Harbor Analytics was founded in 2012.",
            vec![t("Harbor Analytics", "foundedIn", "2012")],
            None,
            vec![t("Harbor Analytics", "foundingYear", "2012")],
        ),
        d(
            "Ana Sato, born in Osaka, works for Harbor Analytics.",
            vec![t("Ana Sato", "bornIn", "Osaka")],
            Some(vec![t("Ana Sato", "birthPlace", "Osaka"), t("Ana Sato", "employer", "Harbor Analytics")]),
            vec![t("Ana Sato", "birthPlace", "Osaka"), t("Ana Sato", "employer", "Harbor Analytics")],
        ),
        d(
            "The museum Casa Verde is located in Lisbon.",
            vec![t("Casa Verde", "locatedIn", "Lisbon")],
            None,
            vec![t("Casa Verde", "locatedIn", "Lisbon")],
        ),
    ]
}

fn corpus_target_schema() -> Schema {
    schema(&[
        (
            "birthPlace",
            "The subject entity was born in the place specified by the object entity.",
        ),
        (
            "employer",
            "The subject entity works for the organization specified by the object entity.",
        ),
        (
            "author",
            "The subject entity is a written work whose author is the object entity.",
        ),
        (
            "spouse",
            "The subject entity is married to the person specified by the object entity.",
        ),
        (
            "foundingYear",
            "The subject entity was founded in the year specified by the object entity.",
        ),
        (
            "locatedIn",
            "The subject entity is located in the place specified by the object entity.",
        ),
        (
            "country",
            "The subject entity belongs to the country specified by the object entity.",
        ),
        (
            "deathPlace",
            "The subject entity died in the place specified by the object entity.",
        ),
        (
            "genre",
            "The subject entity belongs to the artistic genre specified by the object entity.",
        ),
        (
            "publisher",
            "The subject entity was published by the organization specified by the object entity.",
        ),
        (
            "ceo",
            "The subject entity is led by the chief executive specified by the object entity.",
        ),
        (
            "population",
            "The subject entity has the number of inhabitants specified by the object entity.",
        ),
    ])
}

fn corpus_world(docs: &[CorpusDoc], target: &Schema) -> World {
    let mut w = World::default();
    for d in docs {
        w.doc(d.text, d.base.clone(), d.refined.clone(), &[]);
    }
    for r in target.iter() {
        w.define(&r.name, &r.definition);
    }
    for (name, def) in [
        ("bornIn", "The subject entity was born in the place specified by the object entity."),
        ("placeOfBirth", "The subject entity has its place of birth at the location specified by the object entity."),
        ("birthPlace", "The subject entity was born in the place specified by the object entity."),
        ("worksFor", "The subject entity works for the organization specified by the object entity."),
        ("employedBy", "The subject entity is employed by the organization specified by the object entity."),
        ("employer", "The subject entity has the employer specified by the object entity."),
        ("writtenBy", "The subject entity was written by the person specified by the object entity."),
        ("authoredBy", "The subject entity was authored by the person specified by the object entity."),
        ("author", "The subject entity has the author specified by the object entity."),
        ("foundedIn", "The subject entity was founded in the year specified by the object entity."),
        ("hobby", "The subject entity enjoys the pastime specified by the object entity."),
    ] {
        w.define(name, def);
    }
    w.cluster(&["bornIn", "birthPlace", "placeOfBirth"]);
    w.cluster(&["worksFor", "employer", "employedBy"]);
    w.cluster(&["writtenBy", "author", "authoredBy"]);
    w.cluster(&["foundedIn", "foundingYear"]);
    w
}

fn corpus20(root: &Path, few_shot: &[FewShotRecord]) {
    let dir = root.join("corpus20");
    reset(&dir);
    let scripted = corpus_docs();
    let target = corpus_target_schema();
    let docs: Vec<Document> = scripted
        .iter()
        .enumerate()
        .map(|(i, d)| Document {
            id: format!("doc{:02}", i + 1),
            text: d.text.into(),
            reference_triplets: Some(d.reference.clone()),
        })
        .collect();
    write_inputs(&dir, &docs, &target, few_shot);
    let rec = Recorder::new(corpus_world(&scripted, &target), &dir.join("replay"));

    let target_cfg = pipeline(few_shot, CanonMode::TargetAlignment, 1);
    let out = run_edc_r(&docs, Some(&target), &target_cfg, rec.backends()).expect("target run");
    report("corpus20 target", &out.records);
    build_relation_index(&out.schema, &rec.embedder, IndexMode::DefinitionSimilarity)
        .expect("target index");

    let self_cfg = pipeline(few_shot, CanonMode::SelfCanonicalization, 0);
    let out = run_edc_r(&docs, None, &self_cfg, rec.backends()).expect("self run");
    report("corpus20 self", &out.records);
    println!(
        "  self schema: {:?}",
        out.schema.names().collect::<Vec<_>>()
    );

    let out =
        run_define_canonicalize(&docs, None, &self_cfg, rec.backends()).expect("canonicalize run");
    report("corpus20 canonicalize", &out.records);
}

/// Fifty retrieval queries over a combined relation schema, for recall@k.
fn recall50(root: &Path) {
    let dir = root.join("recall50");
    reset(&dir);
    let mut entries: Vec<(&str, &str)> = Vec::new();
    let base = corpus_target_schema();
    for r in base.iter() {
        entries.push((&r.name, &r.definition));
    }
    let extra = [
        ("mission", "The subject entity participated in the event or operation specified by the object entity."),
        ("occupation", "The subject entity has the occupation or profession specified by the object entity."),
        ("award", "The subject entity received the award specified by the object entity."),
        ("almaMater", "The subject entity studied at the school or university specified by the object entity."),
        ("nationality", "The subject entity is a citizen of the country specified by the object entity."),
        ("runwayLength", "The subject entity is an airport with a runway of the length specified by the object entity."),
        ("operator", "The subject entity is operated by the organization specified by the object entity."),
        ("elevation", "The subject entity lies at the height above sea level specified by the object entity."),
    ];
    entries.extend(extra);
    let schema = schema(&entries);

    let people = [
        "Mara Lindqvist",
        "Tobias Renn",
        "Ana Sato",
        "Lena Ferreira",
        "Marek Zielinski",
        "Ines Okafor",
    ];
    let places = [
        "Uppsala", "Graz", "Osaka", "Porto", "Krakow", "Lagos", "Bergen",
    ];
    let orgs = [
        "Nordlys Energy",
        "Alpine Rail",
        "Kestrel Labs",
        "Harbor Analytics",
    ];
    type Clause = fn(&str, &str, &str) -> (String, &'static str);
    let clauses: [Clause; 10] = [
        |p, pl, _| (format!("{p} was born in {pl}"), "birthPlace"),
        |p, _, o| (format!("{p} works for {o}"), "employer"),
        |p, _, _| (format!("{p} wrote the book Quiet Orbit"), "author"),
        |p, _, _| (format!("{p} is married to Daniel Okafor"), "spouse"),
        |_, _, o| (format!("{o} was founded in 1999"), "foundingYear"),
        |_, pl, o| (format!("{o} is located in {pl}"), "locatedIn"),
        |p, pl, _| (format!("{p} died in {pl}"), "deathPlace"),
        |p, _, _| (format!("{p} flew on the Apollo 12 mission"), "mission"),
        |p, _, _| (format!("{p} received the Gold Medal award"), "award"),
        |p, _, _| (format!("{p} studied at Lund University"), "almaMater"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut docs = Vec::new();
    for i in 0..50 {
        let p = people.choose(&mut rng).unwrap();
        let pl = places.choose(&mut rng).unwrap();
        let o = orgs.choose(&mut rng).unwrap();
        let n = rng.gen_range(1..=3);
        let picked: Vec<&Clause> = clauses.choose_multiple(&mut rng, n).collect();
        let mut sentences = Vec::new();
        let mut gold = Vec::new();
        for c in picked {
            let (s, rel) = c(p, pl, o);
            sentences.push(format!("{s}."));
            gold.push(t(p, rel, "x"));
        }
        docs.push(Document {
            id: format!("q{:02}", i + 1),
            text: sentences.join(" "),
            reference_triplets: Some(gold),
        });
    }
    io::write_jsonl(&dir.join("dataset.jsonl"), &docs).unwrap();
    io::write_schema(&dir.join("schema.json"), &schema).unwrap();
    let embedder = Embedder::new(
        RecordingEmbedding::new(embedder_model(), dir.join("replay").join("embedding")),
        4,
    );
    build_relation_index(&schema, &embedder, IndexMode::TextRelevance).unwrap();
    let texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    embed(&embedder, &texts, Some(&RetrievalInstruction::default())).unwrap();
    println!(
        "recall50: {} queries over {} relations",
        docs.len(),
        schema.len()
    );
}

fn write_inputs(dir: &Path, docs: &[Document], schema: &Schema, few_shot: &[FewShotRecord]) {
    io::write_jsonl(&dir.join("dataset.jsonl"), docs).unwrap();
    io::write_schema(&dir.join("schema.json"), schema).unwrap();
    io::write_jsonl(&dir.join("few_shot.jsonl"), few_shot).unwrap();
}

fn reset(dir: &Path) {
    let replay = dir.join("replay");
    if replay.exists() {
        fs::remove_dir_all(&replay).unwrap();
    }
    fs::create_dir_all(dir).unwrap();
}

fn report(name: &str, records: &[edc::ExtractionRecord]) {
    let failed: Vec<_> = records.iter().filter_map(|r| r.error.as_ref()).collect();
    assert!(failed.is_empty(), "{name}: failed documents {failed:?}");
    let last = records.iter().map(|r| r.iteration).max().unwrap_or(0);
    println!("{name}:");
    for r in records.iter().filter(|r| r.iteration == last) {
        println!(
            "  {} {}",
            r.document_id,
            format_triplet_list(&r.canonical_triplets)
        );
    }
}

fn main() {
    let root: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures");
    fs::create_dir_all(&root).unwrap();
    let few_shot = few_shot_records();
    alan_shepard(&root, &few_shot);
    corpus20(&root, &few_shot);
    recall50(&root);
}
