//! Regenerates the demo and evaluation fixtures under `fixtures/`.
//!
//! Everything here is synthetic: endpoint responses are hand-built in the
//! formats the real services use and stored in the recorded-response store.
//! Query embeddings are solved against their candidates so that each preset
//! and evaluation sample ranks its candidates in a planned order.
//!
//! Run from the workspace root:
//! `cargo run -p geowine-service --example build_fixtures`

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use geowine_core::eval::{EvalReport, GroupScores, TopK, DEFAULT_KS};
use geowine_core::store::encode_record;
use geowine_core::{
    content_hash, default_type_registry, rank_candidates, Candidate, EmbeddingKind, EmbeddingVector,
    GeoCell, GeoCoordinate, PartitioningHierarchy, Qid, SceneLabel, TypeRegistry,
};
use geowine_kg::wikidata::commons_file_url;
use geowine_kg::{
    build_geospatial_query, EventClient, HttpRequest, HttpResponse, NewsClient, RecordedStore,
    RecordedTransport, Transport, WikidataClient,
};
use geowine_service::provider::{
    synthesize_base, FixtureEntry, FixtureIndex, ProbabilitiesJson, FIXTURE_EMBEDDINGS_FILE,
    FIXTURE_INDEX_FILE,
};
use geowine_service::Config;
use serde_json::{json, Value};

const BASE_DIM: usize = geowine_core::embedding::BASE_DIM;
const EVAL_RADIUS_KM: f64 = 1.0;

// (id, parent, lat, lng); parents first.
const COARSE: [(&str, f64, f64); 6] = [
    ("FR", 46.6034, 1.8883),
    ("GB", 54.7024, -3.2766),
    ("US", 39.8283, -98.5795),
    ("JP", 36.2048, 138.2529),
    ("AU", -25.2744, 133.7751),
    ("IT", 42.5, 12.5),
];

const FINE: [(&str, &str, f64, f64); 13] = [
    ("FR-paris", "FR", 48.853, 2.349),
    ("FR-lyon", "FR", 45.764, 4.8357),
    ("FR-marseille", "FR", 43.2965, 5.3698),
    ("GB-london", "GB", 51.5074, -0.1278),
    ("GB-edinburgh", "GB", 55.9533, -3.1883),
    ("US-nyc", "US", 40.7484, -73.9857),
    ("US-sf", "US", 37.7749, -122.4194),
    ("JP-kyoto", "JP", 35.0116, 135.7681),
    ("JP-tokyo", "JP", 35.6762, 139.6503),
    ("AU-sydney", "AU", -33.8568, 151.2153),
    ("AU-uluru", "AU", -25.3444, 131.0369),
    ("IT-rome", "IT", 41.9028, 12.4964),
    ("IT-pisa", "IT", 43.723, 10.3966),
];

struct ImageFx {
    file: String,
    bytes: Vec<u8>,
    /// HTTP status the recorded download answers with.
    status: u16,
}

struct EntityFx {
    qid: String,
    label: String,
    type_qid: String,
    lat: f64,
    lng: f64,
    image: Option<ImageFx>,
    article: bool,
    description: Option<String>,
    /// Leave the location out of the SPARQL row.
    drop_location: bool,
}

fn entity(qid: &str, label: &str, type_qid: &str, lat: f64, lng: f64) -> EntityFx {
    let file = format!("Fixture {qid}.svg");
    EntityFx {
        qid: qid.into(),
        label: label.into(),
        type_qid: type_qid.into(),
        lat,
        lng,
        image: Some(ImageFx {
            bytes: svg(label, qid),
            file,
            status: 200,
        }),
        article: true,
        description: None,
        drop_location: false,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg(title: &str, salt: &str) -> Vec<u8> {
    let h = content_hash(format!("{title}|{salt}").as_bytes()).unwrap();
    let hue = u32::from_str_radix(&h[..4], 16).unwrap() % 360;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"320\" height=\"200\" viewBox=\"0 0 320 200\">\
<rect width=\"320\" height=\"200\" fill=\"hsl({hue},45%,52%)\"/>\
<text x=\"16\" y=\"108\" font-family=\"sans-serif\" font-size=\"18\" fill=\"#fff\">{}</text>\
<!-- {salt} --></svg>\n",
        escape(title)
    )
    .into_bytes()
}

struct Fixtures {
    root: PathBuf,
    hierarchy: PartitioningHierarchy,
    registry: TypeRegistry,
    store: RecordedStore,
    wikidata: WikidataClient,
    news: NewsClient,
    events: EventClient,
    index: BTreeMap<String, FixtureEntry>,
    vectors: BTreeMap<String, [EmbeddingVector; 3]>,
    recorded: usize,
}

impl Fixtures {
    fn record(&mut self, req: &HttpRequest, status: u16, body: Vec<u8>) {
        self.store.record(req, &HttpResponse { status, body }).unwrap();
        self.recorded += 1;
    }

    fn record_json(&mut self, req: &HttpRequest, status: u16, body: &Value) {
        let mut bytes = serde_json::to_vec_pretty(body).unwrap();
        bytes.push(b'\n');
        self.record(req, status, bytes);
    }

    fn level_ids(&self, level: usize) -> Vec<String> {
        self.hierarchy.cells(level).iter().map(|c| c.id.clone()).collect()
    }

    /// Probabilities peaked on `cell` (and its parent).
    fn peaked(&self, cell: &str) -> Vec<Vec<f64>> {
        let fine = self.level_ids(1);
        let coarse = self.level_ids(0);
        let parent = self.hierarchy.cell(1, cell).unwrap().parent_id.clone().unwrap();
        let spread = |ids: &[String], winner: &str, top: f64| -> Vec<f64> {
            let rest = (1.0 - top) / (ids.len() - 1) as f64;
            ids.iter().map(|id| if id == winner { top } else { rest }).collect()
        };
        vec![spread(&coarse, &parent, 0.7), spread(&fine, cell, 0.6)]
    }

    fn centroid(&self, cell: &str) -> GeoCoordinate {
        self.hierarchy.cell(1, cell).unwrap().centroid
    }

    /// Candidate embeddings as the provider will produce them.
    fn candidate_vectors(&self, e: &EntityFx) -> Option<[EmbeddingVector; 3]> {
        let img = e.image.as_ref().filter(|i| i.status == 200)?;
        let hash = content_hash(&img.bytes).unwrap();
        if let Some(v) = self.vectors.get(&hash) {
            return Some(v.clone());
        }
        let b = synthesize_base(&hash, BASE_DIM);
        Some([b.geolocation, b.place, b.object])
    }

    /// Records the SPARQL answer for a query and every candidate image.
    fn record_query(&mut self, center: GeoCoordinate, radius_km: f64, groups: &[&str], entities: &[EntityFx]) {
        let registry = self.registry.clone();
        let gs = registry.resolve(groups).unwrap();
        let q = build_geospatial_query(center, radius_km, &gs).unwrap();
        let rows: Vec<Value> = entities.iter().map(sparql_row).collect();
        let body = json!({
            "head": {"vars": ["item", "itemLabel", "itemDescription", "type", "location", "image", "article"]},
            "results": {"bindings": rows}
        });
        let req = self.wikidata.entity_query_request(&q).unwrap();
        self.record_json(&req, 200, &body);
        for e in entities {
            if let Some(img) = &e.image {
                let req = HttpRequest::get(commons_file_url(&img.file));
                let body = if img.status == 200 { img.bytes.clone() } else { Vec::new() };
                self.record(&req, img.status, body);
            }
        }
    }

    fn record_entity_data(&mut self, qid: &str, label: &str, image_file: Option<&str>, sitelinks: Value) {
        let mut claims = json!({});
        if let Some(f) = image_file {
            claims["P18"] = json!([{
                "mainsnak": {"snaktype": "value", "property": "P18",
                             "datavalue": {"value": f, "type": "string"}},
                "rank": "normal"
            }]);
        }
        let body = json!({"entities": {qid: {
            "type": "item",
            "id": qid,
            "labels": {"en": {"language": "en", "value": label}},
            "claims": claims,
            "sitelinks": sitelinks
        }}});
        let req = self.wikidata.entity_data_request(&Qid::new(qid).unwrap());
        self.record_json(&req, 200, &body);
    }

    /// Stores a query image: its probabilities and embeddings whose cosine
    /// order over `cands` (per kind) follows `orders`.
    fn add_query_image(
        &mut self,
        name: &str,
        bytes: &[u8],
        probabilities: ProbabilitiesJson,
        scene: Option<SceneLabel>,
        cands: &[&EntityFx],
        orders: [&[&str]; 3],
    ) {
        let hash = content_hash(bytes).unwrap();
        let embedded: Vec<(&str, [EmbeddingVector; 3])> = cands
            .iter()
            .filter_map(|e| self.candidate_vectors(e).map(|v| (e.qid.as_str(), v)))
            .collect();
        let mut parts = Vec::new();
        for (ki, order) in orders.iter().enumerate() {
            let kind = EmbeddingKind::BASE[ki];
            let vecs: Vec<(&str, &EmbeddingVector)> = embedded.iter().map(|(q, v)| (*q, &v[ki])).collect();
            let q = plant(name, kind, &vecs, order);
            parts.push(q);
        }
        let [g, p, o]: [EmbeddingVector; 3] = parts.try_into().unwrap();
        self.vectors.insert(hash.clone(), [g, p, o]);
        self.index.insert(
            hash,
            FixtureEntry {
                name: name.into(),
                scene,
                probabilities: Some(probabilities),
            },
        );
    }
}

fn sparql_row(e: &EntityFx) -> Value {
    let mut row = json!({
        "item": {"type": "uri", "value": format!("http://www.wikidata.org/entity/{}", e.qid)},
        "itemLabel": {"type": "literal", "value": e.label, "xml:lang": "en"},
        "type": {"type": "uri", "value": format!("http://www.wikidata.org/entity/{}", e.type_qid)},
    });
    if !e.drop_location {
        row["location"] = json!({
            "type": "literal",
            "datatype": "http://www.opengis.net/ont/geosparql#wktLiteral",
            "value": format!("Point({} {})", e.lng, e.lat)
        });
    }
    if let Some(d) = &e.description {
        row["itemDescription"] = json!({"type": "literal", "value": d, "xml:lang": "en"});
    }
    if let Some(img) = &e.image {
        row["image"] = json!({"type": "uri", "value": commons_file_url(&img.file)});
    }
    if e.article {
        row["article"] = json!({
            "type": "uri",
            "value": format!("https://en.wikipedia.org/wiki/{}", e.label.replace(' ', "_"))
        });
    }
    row
}

/// Solves for a query vector `q` in the span of the candidates with
/// `cos(q, c_j)` proportional to a target that decreases along `order`;
/// candidates not in `order` get the lowest targets, in id order.
fn plant(name: &str, kind: EmbeddingKind, cands: &[(&str, &EmbeddingVector)], order: &[&str]) -> EmbeddingVector {
    if cands.is_empty() {
        let b = synthesize_base(&content_hash(name.as_bytes()).unwrap(), BASE_DIM);
        return match kind {
            EmbeddingKind::Geolocation => b.geolocation,
            EmbeddingKind::Place => b.place,
            _ => b.object,
        };
    }
    let mut ranked: Vec<&str> = order.to_vec();
    let mut rest: Vec<&str> = cands.iter().map(|(q, _)| *q).filter(|q| !order.contains(q)).collect();
    rest.sort();
    ranked.extend(rest);
    let n = cands.len();
    let target = |qid: &str| -> f64 {
        let r = ranked.iter().position(|q| *q == qid).expect("candidate in order") as f64;
        0.9 - 0.6 * r / n as f64
    };
    let c: Vec<Vec<f64>> = cands.iter().map(|(_, v)| v.values().iter().map(|&x| x as f64).collect()).collect();
    let norms: Vec<f64> = c.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut g = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum();
        }
        g[i][n] = target(cands[i].0) * norms[i];
    }
    let a = solve(g);
    let mut q = vec![0.0f64; BASE_DIM];
    for (j, cj) in c.iter().enumerate() {
        for (qi, x) in q.iter_mut().zip(cj) {
            *qi += a[j] * x;
        }
    }
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let values: Vec<f32> = q.iter().map(|x| (x / qn) as f32).collect();
    let v = EmbeddingVector::new(kind, values).unwrap();

    let ranking = rank_candidates(&v, cands.iter().map(|(q, c)| Candidate::new(q, Some(c))), kind).unwrap();
    let got: Vec<&str> = ranking.ranked.iter().map(|r| r.entity_id.as_str()).collect();
    assert_eq!(got, ranked, "{name}: planted {kind} order not realized");
    v
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..=n {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

fn first_type(registry: &TypeRegistry, group: &str) -> String {
    registry.group(group).unwrap().members[0].qid.to_string()
}

fn write(path: &Path, bytes: &[u8]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, bytes).unwrap();
}

fn build_partitioning(root: &Path) -> PartitioningHierarchy {
    let coarse = COARSE
        .iter()
        .map(|(id, lat, lng)| GeoCell {
            id: id.to_string(),
            level: 0,
            parent_id: None,
            centroid: GeoCoordinate::new(*lat, *lng).unwrap(),
        })
        .collect();
    let fine = FINE
        .iter()
        .map(|(id, parent, lat, lng)| GeoCell {
            id: id.to_string(),
            level: 1,
            parent_id: Some(parent.to_string()),
            centroid: GeoCoordinate::new(*lat, *lng).unwrap(),
        })
        .collect();
    let h = PartitioningHierarchy::from_levels(vec![coarse, fine]).unwrap();
    let path = root.join("demo/partitioning.csv");
    write(&path, h.to_csv_string().as_bytes());
    PartitioningHierarchy::load(&path).unwrap()
}

fn demo_presets(fx: &mut Fixtures) -> Value {
    let registry = fx.registry.clone();
    let rb = |t: &str| registry.group("Religious Building").unwrap().members.iter().find(|m| m.label == t).unwrap().qid.to_string();
    let (cathedral, church, chapel, basilica, monastery) =
        (rb("cathedral"), rb("church building"), rb("chapel"), rb("basilica"), rb("monastery"));
    let mut presets = Vec::new();

    // Notre-Dame: the only real item id in the fixtures.
    let paris = fx.centroid("FR-paris");
    let mut nd = entity("Q2981", "Notre-Dame de Paris", &cathedral, 48.853, 2.3498);
    nd.description = Some("medieval Catholic cathedral in Paris, France".into());
    let mut nd_dup = entity("Q2981", "Notre-Dame de Paris", &church, 48.853, 2.3498);
    nd_dup.image = None;
    nd_dup.article = false;
    let chapel_a = entity("Q9000101", "Saint Example Chapel", &chapel, 48.8556, 2.345);
    let mut church_b = entity("Q9000102", "Example Church of the Isle", &church, 48.8515, 2.356);
    church_b.article = false;
    let mut basilica_c = entity("Q9000103", "Example Basilica", &basilica, 48.856, 2.342);
    basilica_c.image.as_mut().unwrap().status = 404;
    let mut chapel_d = entity("Q9000104", "Imageless Chapel", &chapel, 48.85, 2.347);
    chapel_d.image = None;
    chapel_d.article = false;
    let mut no_coords = entity("Q9000105", "Chapel Without Coordinates", &chapel, 0.0, 0.0);
    no_coords.drop_location = true;
    let far = entity("Q9000106", "Distant Example Church", &church, 48.87, 2.349);
    let monastery_e = entity("Q9000107", "Example Monastery", &monastery, 48.8545, 2.353);
    let nd_entities = vec![nd, nd_dup, chapel_a, church_b, basilica_c, chapel_d, no_coords, far, monastery_e];
    fx.record_query(paris, 1.0, &["Religious Building"], &nd_entities);
    fx.record_entity_data(
        "Q9000102",
        "Example Church of the Isle",
        Some("Fixture Q9000102.svg"),
        json!({"frwiki": {"site": "frwiki", "title": "Église exemple de l'île",
                               "url": "https://fr.wikipedia.org/wiki/%C3%89glise_exemple_de_l%27%C3%AEle"}}),
    );
    fx.record_entity_data("Q9000104", "Imageless Chapel", None, json!({}));
    fx.record_entity_data(
        "Q2981",
        "Notre-Dame de Paris",
        Some("Fixture Q2981.svg"),
        json!({"enwiki": {"site": "enwiki", "title": "Notre-Dame de Paris",
                          "url": "https://en.wikipedia.org/wiki/Notre-Dame_de_Paris"}}),
    );
    fx.record_entity_data("Q9000101", "Saint Example Chapel", Some("Fixture Q9000101.svg"), json!({}));

    let image = svg("Notre-Dame de Paris (query)", "preset");
    write(&fx.root.join("demo/presets/notre-dame.svg"), &image);
    // Without the scene label the decoder would pick Lyon.
    let mut default = fx.peaked("FR-lyon");
    default[1] = fx
        .level_ids(1)
        .iter()
        .map(|id| match id.as_str() {
            "FR-lyon" => 0.45,
            "FR-paris" => 0.35,
            _ => 0.2 / 11.0,
        })
        .collect();
    let probs = ProbabilitiesJson {
        default,
        by_scene: [(SceneLabel::Urban, fx.peaked("FR-paris"))].into_iter().collect(),
    };
    let cands: Vec<&EntityFx> = nd_entities.iter().collect();
    fx.add_query_image(
        "preset notre-dame",
        &image,
        probs,
        Some(SceneLabel::Urban),
        &cands,
        [
            &["Q2981", "Q9000107", "Q9000101", "Q9000102"],
            &["Q9000101", "Q2981", "Q9000102", "Q9000107"],
            &["Q2981", "Q9000102", "Q9000107", "Q9000101"],
        ],
    );
    presets.push(json!({
        "id": "notre-dame", "label": "Notre-Dame de Paris", "image": "presets/notre-dame.svg",
        "ground_truth": {"lat": 48.853, "lng": 2.3498}, "radius_km": 1.0, "groups": ["Religious Building"]
    }));

    // Thames bridge (synthetic entities).
    let bridge = first_type(&fx.registry, "Bridge");
    let tower = first_type(&fx.registry, "Tower");
    let london = fx.centroid("GB-london");
    let ents = vec![
        entity("Q9000201", "Example Thames Bridge", &bridge, 51.5055, -0.0754),
        entity("Q9000202", "Example Footbridge", &bridge, 51.5081, -0.0986),
        entity("Q9000203", "Example Clock Tower", &tower, 51.5007, -0.1246),
        entity("Q9000204", "Example Water Tower", &tower, 51.52, -0.14),
        entity("Q9000205", "Example Railway Bridge", &bridge, 51.49, -0.12),
    ];
    fx.record_query(london, 5.0, &["Bridge", "Tower"], &ents);
    let image = svg("Thames bridge (query)", "preset");
    write(&fx.root.join("demo/presets/thames-bridge.svg"), &image);
    let cands: Vec<&EntityFx> = ents.iter().collect();
    let probs = ProbabilitiesJson { default: fx.peaked("GB-london"), by_scene: BTreeMap::new() };
    fx.add_query_image(
        "preset thames-bridge",
        &image,
        probs,
        None,
        &cands,
        [&["Q9000201", "Q9000205"], &["Q9000202", "Q9000201"], &["Q9000201", "Q9000203"]],
    );
    presets.push(json!({
        "id": "thames-bridge", "label": "Thames bridge", "image": "presets/thames-bridge.svg",
        "ground_truth": {"lat": 51.5055, "lng": -0.0754}, "radius_km": 5.0, "groups": ["Bridge", "Tower"]
    }));

    // Kyoto temple.
    let temple = rb("Buddhist temple");
    let shrine = rb("shrine");
    let kyoto = fx.centroid("JP-kyoto");
    let ents = vec![
        entity("Q9000301", "Example Hillside Temple", &temple, 35.0128, 135.77),
        entity("Q9000302", "Example Shrine", &shrine, 35.005, 135.775),
        entity("Q9000303", "Example Garden Temple", &temple, 35.02, 135.76),
        entity("Q9000304", "Example Riverside Shrine", &shrine, 35.009, 135.769),
    ];
    fx.record_query(kyoto, 2.0, &["Religious Building"], &ents);
    let image = svg("Kyoto temple (query)", "preset");
    write(&fx.root.join("demo/presets/kyoto-temple.svg"), &image);
    let cands: Vec<&EntityFx> = ents.iter().collect();
    let probs = ProbabilitiesJson { default: fx.peaked("JP-kyoto"), by_scene: BTreeMap::new() };
    fx.add_query_image(
        "preset kyoto-temple",
        &image,
        probs,
        Some(SceneLabel::Natural),
        &cands,
        [&["Q9000301", "Q9000303"], &["Q9000303", "Q9000301"], &["Q9000302"]],
    );
    presets.push(json!({
        "id": "kyoto-temple", "label": "Kyoto temple", "image": "presets/kyoto-temple.svg",
        "ground_truth": {"lat": 35.0128, "lng": 135.77}, "radius_km": 2.0, "groups": ["Religious Building"]
    }));

    // Sydney harbour: one candidate has an all-zero place embedding.
    let building = first_type(&fx.registry, "Building");
    let attraction = first_type(&fx.registry, "Tourist Attraction");
    let sydney = fx.centroid("AU-sydney");
    let ents = vec![
        entity("Q9000401", "Example Harbour Building", &building, -33.8568, 151.2153),
        entity("Q9000402", "Example Harbour Park", &attraction, -33.86, 151.21),
        entity("Q9000403", "Example Ferry Terminal", &building, -33.861, 151.211),
        entity("Q9000404", "Example Lookout", &attraction, -33.853, 151.22),
    ];
    {
        let hash = content_hash(&ents[3].image.as_ref().unwrap().bytes).unwrap();
        let b = synthesize_base(&hash, BASE_DIM);
        let zero = EmbeddingVector::new(EmbeddingKind::Place, vec![0.0; BASE_DIM]).unwrap();
        fx.vectors.insert(hash, [b.geolocation, zero, b.object]);
    }
    fx.record_query(sydney, 1.0, &["Building", "Tourist Attraction"], &ents);
    let image = svg("Sydney harbour (query)", "preset");
    write(&fx.root.join("demo/presets/sydney-harbour.svg"), &image);
    let cands: Vec<&EntityFx> = ents.iter().collect();
    let probs = ProbabilitiesJson { default: fx.peaked("AU-sydney"), by_scene: BTreeMap::new() };
    // The zero place vector is still a candidate for the solver; ranking
    // excludes it, so it is listed last.
    let place_cands: Vec<&EntityFx> = cands.iter().copied().filter(|e| e.qid != "Q9000404").collect();
    fx.add_query_image(
        "preset sydney-harbour",
        &image,
        probs,
        Some(SceneLabel::Urban),
        &place_cands,
        [&["Q9000401"], &["Q9000402"], &["Q9000401"]],
    );
    presets.push(json!({
        "id": "sydney-harbour", "label": "Sydney harbour", "image": "presets/sydney-harbour.svg",
        "ground_truth": {"lat": -33.8568, "lng": 151.2153}, "radius_km": 1.0,
        "groups": ["Building", "Tourist Attraction"]
    }));

    // Outback: the recorded query answers with no entities.
    let uluru = fx.centroid("AU-uluru");
    fx.record_query(uluru, 3.0, &["Waterfall"], &[]);
    let image = svg("Outback rock (query)", "preset");
    write(&fx.root.join("demo/presets/outback.svg"), &image);
    let probs = ProbabilitiesJson { default: fx.peaked("AU-uluru"), by_scene: BTreeMap::new() };
    fx.add_query_image("preset outback", &image, probs, Some(SceneLabel::Natural), &[], [&[], &[], &[]]);
    presets.push(json!({
        "id": "outback", "label": "Outback rock", "image": "presets/outback.svg",
        "ground_truth": {"lat": -25.3444, "lng": 131.0369}, "radius_km": 3.0, "groups": ["Waterfall"]
    }));

    json!({"presets": presets})
}

fn context_fixtures(fx: &mut Fixtures) {
    let news_req = |fx: &Fixtures, label: &str| fx.news.request(label, geowine_kg::DEFAULT_NEWS_LIMIT).unwrap();
    let article = |title: &str, url: &str, date: &str, time: &str, lang: &str, body: &str| {
        json!({"uri": url.rsplit('/').next().unwrap(), "lang": lang, "isDuplicate": false, "date": date,
               "time": time, "dateTime": format!("{date}T{time}Z"), "dataType": "news", "url": url,
               "title": title, "body": body, "source": {"uri": "news.example.org", "title": "Example News"},
               "image": null})
    };
    let body = json!({"articles": {"page": 1, "pages": 1, "totalResults": 3, "results": [
        article("Notre-Dame de Paris reopens its doors", "https://news.example.org/2024/notre-dame-reopens",
                "2024-12-08", "09:30:00", "eng",
                "Notre-Dame de Paris welcomed visitors again after five years of restoration work."),
        article("Restoration of Notre-Dame de Paris enters final phase", "https://news.example.org/2023/restoration-final-phase",
                "2023-09-14", "16:05:00", "eng",
                "Craftspeople are completing the spire of Notre-Dame de Paris."),
        article("Notre-Dame de Paris : la flèche retrouve sa place", "https://news.example.org/2023/fleche",
                "2023-12-16", "11:00:00", "fra",
                "La flèche de Notre-Dame de Paris est de nouveau visible dans le ciel parisien."),
    ]}});
    let req = news_req(fx, "Notre-Dame de Paris");
    fx.record_json(&req, 200, &body);
    // News for the chapel fails upstream; its events succeed.
    let req = news_req(fx, "Saint Example Chapel");
    fx.record(&req, 500, Vec::new());

    let lit = |v: &str| json!({"type": "literal", "value": v, "xml:lang": "en"});
    let date = |v: &str| json!({"type": "literal", "value": v, "datatype": "http://www.w3.org/2001/XMLSchema#date"});
    let uri = |v: &str| json!({"type": "uri", "value": v});
    let ev = "http://oekg.l3s.uni-hannover.de/resource/fixture_event_";
    let rows = json!([
        {"event": uri(&format!("{ev}1")), "label": lit("Notre-Dame de Paris fire"), "start": date("2019-04-15"),
         "end": date("2019-04-16"), "description": lit("Fire that destroyed the spire and much of the roof.")},
        {"event": uri(&format!("{ev}2")), "label": lit("Reopening of Notre-Dame de Paris"), "start": date("2024-12-07"),
         "end": date("2024-12-08")},
        {"event": uri(&format!("{ev}3")), "label": lit("Coronation of Napoleon"), "start": date("1804-12-02"),
         "end": date("1804-12-02"), "description": lit("Coronation ceremony held in the cathedral.")},
        {"event": uri(&format!("{ev}2")), "label": lit("Reopening of Notre-Dame de Paris"),
         "description": lit("Ceremony marking the end of the restoration.")}
    ]);
    let req = fx.events.request("Q2981").unwrap();
    fx.record_json(&req, 200, &json!({"head": {"vars": ["event", "label", "start", "end", "description"]},
                                      "results": {"bindings": rows}}));
    let rows = json!([
        {"event": uri(&format!("{ev}4")), "label": lit("Consecration of Saint Example Chapel"), "start": date("1248-04-26")}
    ]);
    let req = fx.events.request("Q9000101").unwrap();
    fx.record_json(&req, 200, &json!({"head": {"vars": ["event", "label", "start"]}, "results": {"bindings": rows}}));
}

struct SampleFx {
    id: &'static str,
    group: &'static str,
    truth_cell: &'static str,
    predicted_cell: &'static str,
    /// Planned 1-based rank of the ground truth; `None` when it is not retrieved.
    rank: Option<usize>,
    candidates: usize,
    duplicate: bool,
}

const SAMPLES: [SampleFx; 12] = [
    SampleFx { id: "e01", group: "Museum", truth_cell: "FR-paris", predicted_cell: "FR-paris", rank: Some(1), candidates: 4, duplicate: false },
    SampleFx { id: "e02", group: "Bridge", truth_cell: "GB-london", predicted_cell: "GB-london", rank: Some(1), candidates: 3, duplicate: false },
    SampleFx { id: "e03", group: "Skyscraper", truth_cell: "US-nyc", predicted_cell: "US-nyc", rank: Some(1), candidates: 6, duplicate: false },
    SampleFx { id: "e04", group: "Religious Building", truth_cell: "JP-tokyo", predicted_cell: "JP-tokyo", rank: Some(1), candidates: 5, duplicate: false },
    SampleFx { id: "e05", group: "Historic Site", truth_cell: "IT-rome", predicted_cell: "IT-rome", rank: Some(3), candidates: 6, duplicate: false },
    SampleFx { id: "e06", group: "Tower", truth_cell: "AU-sydney", predicted_cell: "AU-sydney", rank: Some(5), candidates: 7, duplicate: false },
    SampleFx { id: "e07", group: "Castle", truth_cell: "GB-edinburgh", predicted_cell: "GB-edinburgh", rank: Some(7), candidates: 9, duplicate: false },
    SampleFx { id: "e08", group: "Bridge", truth_cell: "US-sf", predicted_cell: "US-sf", rank: Some(11), candidates: 12, duplicate: false },
    SampleFx { id: "e09", group: "Tower", truth_cell: "JP-kyoto", predicted_cell: "JP-kyoto", rank: None, candidates: 4, duplicate: false },
    SampleFx { id: "e10", group: "Square", truth_cell: "FR-lyon", predicted_cell: "FR-marseille", rank: Some(1), candidates: 0, duplicate: false },
    SampleFx { id: "e11", group: "Tower", truth_cell: "IT-pisa", predicted_cell: "IT-rome", rank: Some(1), candidates: 0, duplicate: false },
    SampleFx { id: "e12", group: "Monument", truth_cell: "FR-marseille", predicted_cell: "FR-marseille", rank: Some(1), candidates: 4, duplicate: true },
];

/// Offsets (degrees) keeping candidates within about 0.8 km of a centroid.
fn offset(i: usize) -> (f64, f64) {
    let angle = i as f64 * 2.399963;
    let r = 0.002 + 0.0004 * i as f64;
    (r * angle.sin(), r * angle.cos())
}

fn eval_fixtures(fx: &mut Fixtures) -> (String, String, EvalReport) {
    let mut manifest = String::from("image_ref,lat,lng,qid,group\n");
    let mut filtered = String::from("image_ref,lat,lng,qid,group\n");
    for (si, s) in SAMPLES.iter().enumerate() {
        let type_qid = first_type(&fx.registry, s.group);
        let truth_centroid = fx.centroid(s.truth_cell);
        let (dlat, dlng) = offset(0);
        let truth = (truth_centroid.lat() + dlat, truth_centroid.lng() + dlng);
        let truth_qid = format!("Q91{:02}000", si + 1);
        let image_path = format!("images/{}.svg", s.id);
        let line = format!("{image_path},{},{},{truth_qid},{}\n", truth.0, truth.1, s.group);
        manifest.push_str(&line);
        if s.predicted_cell != s.truth_cell {
            filtered.push_str(&line);
        }

        let center = fx.centroid(s.predicted_cell);
        let mut ents: Vec<EntityFx> = Vec::new();
        for j in 0..s.candidates {
            let (dlat, dlng) = offset(j + 1);
            let qid = format!("Q91{:02}{:03}", si + 1, j + 1);
            let label = format!("Fixture {} {}-{}", s.group, s.id, j + 1);
            ents.push(entity(&qid, &label, &type_qid, center.lat() + dlat, center.lng() + dlng));
        }
        if s.rank.is_some() && s.candidates > 0 {
            // The ground truth replaces the first filler.
            let mut gt = entity(&truth_qid, &format!("Fixture {} {} truth", s.group, s.id), &type_qid, truth.0, truth.1);
            if s.duplicate {
                gt.image.as_mut().unwrap().bytes = svg(&format!("query {}", s.id), "eval");
            }
            ents[0] = gt;
        }
        let image = svg(&format!("query {}", s.id), "eval");
        write(&fx.root.join("eval").join(&image_path), &image);

        let mut order: Vec<String> = ents.iter().skip(1).map(|e| e.qid.clone()).collect();
        if let Some(r) = s.rank.filter(|_| s.candidates > 0) {
            order.insert(r - 1, ents[0].qid.clone());
        } else if s.candidates > 0 {
            order.insert(0, ents[0].qid.clone());
        }
        let order_refs: Vec<&str> = order.iter().map(String::as_str).collect();
        if s.candidates > 0 {
            fx.record_query(center, EVAL_RADIUS_KM, &[s.group], &ents);
        }
        let probs = ProbabilitiesJson { default: fx.peaked(s.predicted_cell), by_scene: BTreeMap::new() };
        let cands: Vec<&EntityFx> = ents.iter().collect();
        fx.add_query_image(&format!("eval {}", s.id), &image, probs, None, &cands, [&order_refs, &[], &[]]);
    }
    let report = expected_report(&fx.registry);
    (manifest, filtered, report)
}

/// The report the planned samples must produce, counted directly from
/// [`SAMPLES`].
fn expected_report(registry: &TypeRegistry) -> EvalReport {
    let ks = DEFAULT_KS.to_vec();
    let score = |name: &str, abbrev: String, members: &[&SampleFx]| {
        let instances = members.len();
        let topk = ks
            .iter()
            .map(|&k| {
                let hits = members.iter().filter(|s| matches!(s.rank, Some(r) if r <= k)).count();
                TopK { k, hits, accuracy: if instances == 0 { 0.0 } else { hits as f64 / instances as f64 } }
            })
            .collect();
        GroupScores { group: name.into(), abbreviation: abbrev, instances, topk }
    };
    let scored: Vec<&SampleFx> =
        SAMPLES.iter().filter(|s| s.predicted_cell == s.truth_cell && !s.duplicate).collect();
    let per_group = registry
        .groups()
        .iter()
        .map(|g| {
            let members: Vec<&SampleFx> = scored.iter().copied().filter(|s| s.group == g.name).collect();
            score(&g.name, g.abbreviation(), &members)
        })
        .collect();
    EvalReport {
        ks: ks.clone(),
        per_group,
        overall: score("overall", "overall".into(), &scored),
        filtered_out_gcd: SAMPLES.iter().filter(|s| s.predicted_cell != s.truth_cell).count(),
        filtered_out_dup: SAMPLES.iter().filter(|s| s.duplicate).count(),
        skipped_unreadable: 0,
    }
}

fn main() {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("fixtures"));
    let recorded_dir = root.join("demo/recorded");
    let provider_dir = root.join("demo/provider");
    for d in [&recorded_dir, &provider_dir, &root.join("demo/presets"), &root.join("eval/images")] {
        let _ = std::fs::remove_dir_all(d);
    }

    let hierarchy = build_partitioning(&root);
    let cfg = Config::default();
    let store = RecordedStore::new(&recorded_dir);
    let transport: Arc<dyn Transport> = Arc::new(RecordedTransport::new(store.clone()));
    let mut fx = Fixtures {
        root: root.clone(),
        hierarchy,
        registry: default_type_registry().unwrap(),
        wikidata: WikidataClient::with_endpoints(
            transport.clone(),
            &cfg.wikidata_sparql_url,
            &cfg.wikidata_entity_data_url,
        ),
        news: NewsClient::new(transport.clone(), &cfg.news_url, None).unwrap(),
        events: EventClient::new(transport, &cfg.oekg_url),
        store,
        index: BTreeMap::new(),
        vectors: BTreeMap::new(),
        recorded: 0,
    };

    let presets = demo_presets(&mut fx);
    let mut text = serde_json::to_string_pretty(&presets).unwrap();
    text.push('\n');
    write(&root.join("demo/presets.json"), text.as_bytes());
    context_fixtures(&mut fx);

    let (manifest, filtered, report) = eval_fixtures(&mut fx);
    write(&root.join("eval/manifest.csv"), manifest.as_bytes());
    write(&root.join("eval/all_filtered.csv"), filtered.as_bytes());
    write(&root.join("eval/golden_report.json"), report.to_json().as_bytes());
    write(&root.join("eval/golden_report.txt"), report.render_table().as_bytes());

    let index = FixtureIndex { base_dim: BASE_DIM, images: fx.index.clone() };
    let mut text = serde_json::to_string_pretty(&index).unwrap();
    text.push('\n');
    write(&provider_dir.join(FIXTURE_INDEX_FILE), text.as_bytes());
    let mut bin = Vec::new();
    for (hash, vs) in &fx.vectors {
        for v in vs {
            encode_record(&mut bin, hash, v);
        }
    }
    write(&provider_dir.join(FIXTURE_EMBEDDINGS_FILE), &bin);

    println!(
        "wrote {} recorded responses, {} provider entries, {} stored embedding sets under {}",
        fx.recorded,
        fx.index.len(),
        fx.vectors.len(),
        root.display()
    );
}
