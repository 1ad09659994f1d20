"""Regenerates pages.jsonl: 100 raw HTML pages for the pipeline tests.

The mix covers clean articles, link-heavy navigation pages, Chinese pages,
near-duplicate copies, pages in an unsupported script, repeated boilerplate paragraphs and pages with no
usable text. Output is deterministic.
"""
import json
import random

rng = random.Random(7)

TOPICS = ["rivers", "bridges", "orchards", "lighthouses", "glaciers", "markets",
          "railways", "libraries", "harbours", "vineyards"]
VERBS = ["shaped", "supported", "reshaped", "sustained", "challenged", "connected"]
ZH = ["河流", "城市", "历史", "山脉", "农业", "港口", "铁路", "图书馆", "文化", "经济"]

NAV = ("<nav><ul>" + "".join(f"<li><a href='/{s}'>{s.title()}</a></li>"
                              for s in ["home", "news", "sport", "weather", "about", "contact"])
       + "</ul></nav>")
FOOTER = ("<footer><p>Subscribe to our newsletter for weekly updates about every "
          "story we publish on this site.</p></footer>")


def sentence(topic):
    v = rng.choice(VERBS)
    year = rng.randint(1700, 2020)
    n = rng.randint(2, 90)
    return (f"In {year} the {topic} of the northern valley {v} about {n} "
            f"villages, according to the regional survey.")


def article(topic, paragraphs):
    body = "".join(f"<p>{' '.join(sentence(topic) for _ in range(3))}</p>"
                   for _ in range(paragraphs))
    return (f"<html><head><title>{topic}</title><script>var x = 1;</script></head>"
            f"<body>{NAV}<main><h1>On {topic}</h1>{body}</main>{FOOTER}</body></html>")


def zh_article():
    paras = "".join(
        "<p>" + "，".join(rng.choice(ZH) + rng.choice(ZH) + "的发展对这个地区很重要" for _ in range(4)) + "。</p>"
        for _ in range(3))
    return f"<html><body>{NAV}<div>{paras}</div></body></html>"


def link_farm():
    links = "".join(f"<p><a href='/p{i}'>Read more about topic number {i} here</a></p>" for i in range(12))
    return f"<html><body>{NAV}{links}</body></html>"


pages = []
for i in range(100):
    kind = i % 10
    topic = TOPICS[i % len(TOPICS)]
    if kind in (0, 1, 2, 3, 4):
        html = article(topic, rng.randint(2, 5))
    elif kind == 5:
        html = zh_article()
    elif kind == 6:
        html = link_farm()
    elif kind == 7:
        # near-duplicate of the previous clean article with one extra word
        html = pages[-3]["text"].replace("villages", "small villages", 1)
    elif kind == 8 and i % 20 == 8:
        html = "<html><body><script>track()</script><p>Hi.</p></body></html>"
    elif kind == 8:
        html = ("<html><body><p>Реки северной долины веками поддерживали жизнь десятков "
                "деревень и небольших городов.</p></body></html>")
    else:
        html = article(topic, 2).replace("</main>", FOOTER.replace("footer", "section") + "</main>")
    pub = f"2023-{1 + i % 12:02d}-{1 + i % 28:02d}"
    pages.append({
        "id": f"page-{i:03d}",
        "source": "web",
        "url": f"https://example.org/{topic}/{i}",
        "language": "unknown",
        "published_at": pub,
        "text": html,
        "byte_len": len(html.encode("utf-8")),
        "char_len": len(html),
        "annotations": None,
    })

with open("pages.jsonl", "w", encoding="utf-8") as f:
    for p in pages:
        f.write(json.dumps(p, ensure_ascii=False, separators=(",", ":")) + "\n")
