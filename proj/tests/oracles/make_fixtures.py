#!/usr/bin/env python3
"""Generates the desk-scale dialogue fixtures.

base_corpus.jsonl      1000 synthetic small-talk pairs (phase-1 data)
closed_domain.jsonl    90 FAQ pairs about an undergraduate program (phase-2 data)

Deterministic: rerunning reproduces the committed files byte for byte.
"""
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures"

TOPICS = [
    (["what areas can i specialize in?", "which specializations are offered?", "can i choose a specialty?"],
     "artificial intelligence, data science, networks and operating systems."),
    (["how many years does the degree take?", "how long is the program?", "how many semesters do i study?"],
     "the plan lasts from nine to eighteen semesters."),
    (["is there financial aid?", "are there scholarships?", "can i get economic support?"],
     "yes, there are several grants listed on the official site."),
    (["which programming languages will i learn?", "what languages do you teach?", "do we learn to code?"],
     "we teach c, java and python from the basics."),
    (["do i have to study a lot?", "is the program hard?", "how difficult are the classes?"],
     "it takes practice, but math lovers enjoy the challenge."),
    (["when do applications open?", "what is the admission date?", "when can i apply?"],
     "applications open every february on the admissions portal."),
    (["where is the campus?", "how do i get to the faculty?", "what is the address?"],
     "the faculty is on the north campus next to the library."),
    (["is there an entrance exam?", "do i need to pass a test?", "how does admission work?"],
     "you must pass the general entrance exam with a good score."),
    (["can i study part time?", "is there an evening schedule?", "can i work while studying?"],
     "classes run in the morning, so part time work is possible."),
    (["do i need to know math?", "how much math is required?", "is calculus part of the plan?"],
     "yes, calculus, algebra and discrete math are core courses."),
    (["are there internships?", "can i do professional practice?", "do students work in companies?"],
     "students complete an internship in the final year."),
    (["how do i graduate?", "what are the titling options?", "is a thesis required?"],
     "you can graduate by thesis, exam or postgraduate credits."),
    (["is there an exchange program?", "can i study abroad?", "are there mobility options?"],
     "yes, mobility agreements cover universities in europe and asia."),
    (["what does a computer scientist do?", "what jobs can i get?", "where do graduates work?"],
     "graduates build software, analyze data and do research."),
    (["is english required?", "do i need a second language?", "must i speak english?"],
     "an english certificate is required before the sixth semester."),
    (["how much does it cost?", "what is the tuition fee?", "is the program expensive?"],
     "tuition is low because it is a public university."),
    (["are there research groups?", "can i join a lab?", "do students do research?"],
     "several labs accept undergraduate students as assistants."),
    (["do you have computer labs?", "is there equipment for students?", "can i use the lab computers?"],
     "there are four computer labs open all week."),
    (["what is the social service?", "do i have to do social service?", "when is social service done?"],
     "social service takes four hundred hours after seventy percent of credits."),
    (["can i change my major?", "is it possible to switch programs?", "how do i transfer careers?"],
     "you may request a change at the end of the first year."),
    (["are there sports teams?", "can i play soccer here?", "what sports are available?"],
     "the university has soccer, basketball and swimming teams."),
    (["who are the professors?", "are the teachers good?", "do professors have doctorates?"],
     "most professors hold a doctorate and do active research."),
    (["is there a master program?", "can i continue with postgraduate studies?", "is there a graduate school?"],
     "yes, the faculty offers a master and a doctorate in computing."),
    (["what electives are there?", "can i take optional courses?", "which optional subjects exist?"],
     "electives include robotics, graphics, security and compilers."),
    (["how are classes evaluated?", "how is grading done?", "what is the passing grade?"],
     "courses are graded from zero to ten and six is passing."),
    (["is attendance mandatory?", "do i have to attend every class?", "how many absences are allowed?"],
     "you need eighty percent attendance to take the final exam."),
    (["is there a cafeteria?", "where can i eat on campus?", "is food available at the faculty?"],
     "there is a cafeteria on the ground floor of building b."),
    (["do you offer online classes?", "can i study remotely?", "is the program virtual?"],
     "the program is in person, with some online support material."),
    (["what hardware do i need?", "do i need my own laptop?", "should i buy a computer?"],
     "a personal laptop helps, but the labs cover every course."),
    (["who do i contact for help?", "where is the coordination office?", "how can i ask more questions?"],
     "write to the program coordination office by email."),
]

NAMES = ["ana", "luis", "marta", "jorge", "sofia", "pablo", "elena", "diego", "lucia", "carlos"]
FOODS = ["pizza", "tacos", "pasta", "soup", "rice", "bread", "salad", "fruit", "coffee", "tea"]
PLACES = ["the beach", "the park", "the city", "the museum", "the mountains", "the library", "the market"]
ACTIVITIES = ["reading", "running", "cooking", "painting", "coding", "dancing", "swimming", "singing"]
WEATHER = ["sunny", "rainy", "cold", "warm", "windy", "cloudy"]
DAYS = ["monday", "tuesday", "friday", "the weekend", "tomorrow", "today"]
SUBJECTS = ["math", "history", "physics", "music", "biology", "programming", "chemistry"]

TEMPLATES = [
    (lambda r: f"hello, my name is {r.choice(NAMES)}.", lambda r: f"nice to meet you, i am {r.choice(NAMES)}."),
    (lambda r: "how are you today?", lambda r: r.choice(["i am fine, thanks.", "pretty good, and you?", "a bit tired, but ok."])),
    (lambda r: f"do you like {r.choice(FOODS)}?", lambda r: f"yes, but i prefer {r.choice(FOODS)}."),
    (lambda r: f"what did you do on {r.choice(DAYS)}?", lambda r: f"i went to {r.choice(PLACES)} with friends."),
    (lambda r: f"is it {r.choice(WEATHER)} outside?", lambda r: f"no, it is {r.choice(WEATHER)} right now."),
    (lambda r: "what is your hobby?", lambda r: f"i really enjoy {r.choice(ACTIVITIES)}."),
    (lambda r: f"do you study {r.choice(SUBJECTS)}?", lambda r: f"i study {r.choice(SUBJECTS)} at the university."),
    (lambda r: f"shall we go to {r.choice(PLACES)}?", lambda r: f"sure, let us go on {r.choice(DAYS)}."),
    (lambda r: f"i love {r.choice(ACTIVITIES)}.", lambda r: f"me too, {r.choice(ACTIVITIES)} is fun."),
    (lambda r: f"what class do you have on {r.choice(DAYS)}?", lambda r: f"i have {r.choice(SUBJECTS)} in the morning."),
    (lambda r: "any plans for the holidays?", lambda r: f"i will visit {r.choice(PLACES)} and rest."),
    (lambda r: f"can you recommend a book about {r.choice(SUBJECTS)}?", lambda r: "try the one in the library, it is great."),
]


def base_corpus(n, seed):
    r = random.Random(seed)
    pairs = []
    for _ in range(n):
        ctx, resp = r.choice(TEMPLATES)
        context = ctx(r)
        if r.random() < 0.2:
            # two-turn context
            ctx2, resp2 = r.choice(TEMPLATES)
            context = ctx2(r) + "\n" + resp2(r) + "\n" + context
        pairs.append({"context": context, "response": resp(r)})
    return pairs


def closed_domain():
    pairs = []
    for questions, answer in TOPICS:
        for q in questions:
            pairs.append({"context": q, "response": answer})
    return pairs


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    write_jsonl(OUT / "base_corpus.jsonl", base_corpus(1000, 7))
    cd = closed_domain()
    assert len(cd) == 90
    write_jsonl(OUT / "closed_domain.jsonl", cd)
